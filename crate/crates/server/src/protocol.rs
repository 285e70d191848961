//! JSON control and status messages.

use serde::Deserialize;
use serde_json::{json, Value};

use topsteer_core::mesh::BoundaryEntity;
use topsteer_core::optimizer::OptimizerParams;
use topsteer_core::session::{Preset, SessionError, Snapshot};

/// A client request after syntactic validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    SetDomain(SetDomain),
    Tap { entity: BoundaryEntity },
    Drag { entity: BoundaryEntity, force: [f64; 3] },
    Preset(Preset),
    SetParams(ParamPatch),
    Start,
    Stop,
    Reset,
    GetSnapshot,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetDomain {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub elem_size: f64,
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

/// Subset of optimizer parameters to change.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPatch {
    pub volfrac: Option<f64>,
    pub maxiter: Option<u32>,
    pub remove_voids: Option<bool>,
    pub iterative_solver: Option<bool>,
    pub p: Option<f64>,
    #[serde(rename = "move")]
    pub move_limit: Option<f64>,
    pub eta: Option<f64>,
    pub change_tol: Option<f64>,
    pub void_threshold: Option<f64>,
    pub void_patience: Option<u32>,
    pub rmin: Option<f64>,
}

impl ParamPatch {
    /// Whether the patch touches parameters that cannot change mid-run.
    pub fn has_static_fields(&self) -> bool {
        self.p.is_some()
            || self.move_limit.is_some()
            || self.eta.is_some()
            || self.change_tol.is_some()
            || self.void_threshold.is_some()
            || self.void_patience.is_some()
            || self.rmin.is_some()
    }

    pub fn apply(&self, base: &OptimizerParams) -> OptimizerParams {
        let mut p = base.clone();
        macro_rules! set {
            ($($src:ident => $dst:ident),*) => { $(if let Some(v) = self.$src { p.$dst = v; })* };
        }
        set!(volfrac => volfrac, maxiter => maxiter, remove_voids => remove_voids, iterative_solver => iterative_solver,
             p => penal, move_limit => move_limit, eta => eta, change_tol => change_tol,
             void_threshold => void_threshold, void_patience => void_patience, rmin => rmin);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub detail: String,
}

impl ProtocolError {
    pub fn new(code: &'static str, detail: impl Into<String>) -> Self {
        Self { code, detail: detail.into() }
    }

    pub fn to_json(&self) -> String {
        json!({"type": "error", "code": self.code, "detail": self.detail}).to_string()
    }
}

impl From<SessionError> for ProtocolError {
    fn from(e: SessionError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

fn field<T: serde::de::DeserializeOwned>(msg: &Value, name: &str) -> Result<T, ProtocolError> {
    let v = msg.get(name).ok_or_else(|| ProtocolError::new("parse_error", format!("missing field {name:?}")))?;
    T::deserialize(v).map_err(|e| ProtocolError::new("parse_error", format!("field {name:?}: {e}")))
}

fn entity(msg: &Value) -> Result<BoundaryEntity, ProtocolError> {
    let id: String = field(msg, "entity")?;
    id.parse().map_err(|e: topsteer_core::mesh::MeshError| ProtocolError::new("bad_entity", e.to_string()))
}

fn payload<T: serde::de::DeserializeOwned>(mut msg: Value) -> Result<T, ProtocolError> {
    if let Some(obj) = msg.as_object_mut() {
        obj.remove("type");
    }
    T::deserialize(msg).map_err(|e| ProtocolError::new("parse_error", e.to_string()))
}

pub fn parse_control(text: &str) -> Result<Control, ProtocolError> {
    let msg: Value = serde_json::from_str(text).map_err(|e| ProtocolError::new("parse_error", e.to_string()))?;
    let ty = msg
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::new("parse_error", "message needs a string \"type\""))?
        .to_owned();
    Ok(match ty.as_str() {
        "set_domain" => Control::SetDomain(payload(msg)?),
        "tap" => Control::Tap { entity: entity(&msg)? },
        "drag" => {
            let entity = entity(&msg)?;
            Control::Drag { entity, force: field(&msg, "force")? }
        }
        "preset" => {
            let name: String = field(&msg, "name")?;
            let preset = match name.as_str() {
                "cantilever" => Preset::Cantilever,
                "bridge" => Preset::Bridge,
                other => return Err(ProtocolError::new("bad_value", format!("unknown preset {other:?}"))),
            };
            Control::Preset(preset)
        }
        "set_params" => Control::SetParams(payload(msg)?),
        "start" => Control::Start,
        "stop" => Control::Stop,
        "reset" => Control::Reset,
        "get_snapshot" => Control::GetSnapshot,
        other => return Err(ProtocolError::new("parse_error", format!("unknown message type {other:?}"))),
    })
}

pub fn ack(applies_at: u32) -> String {
    json!({"type": "ack", "applies_at": applies_at}).to_string()
}

fn compliance(snap: &Snapshot) -> Value {
    snap.last.as_ref().map_or(Value::Null, |r| json!(r.compliance))
}

/// Per-iteration status; `history_tail` holds entries newer than `since`.
pub fn status(snap: &Snapshot, since: u32) -> String {
    let tail: Vec<(u32, f64)> = snap.history.iter().copied().filter(|(k, _)| *k > since).collect();
    let mut msg = json!({
        "type": "status",
        "phase": snap.phase,
        "iter": snap.iter,
        "compliance": compliance(snap),
        "volume": snap.volume,
        "history_tail": tail,
    });
    if let Some(err) = &snap.error {
        msg["error"] = json!(err);
    }
    msg.to_string()
}

/// Full session state for `get_snapshot`.
pub fn snapshot(snap: &Snapshot) -> String {
    json!({
        "type": "snapshot",
        "phase": snap.phase,
        "iter": snap.iter,
        "compliance": compliance(snap),
        "volume": snap.volume,
        "history": snap.history,
        "params": snap.params,
        "bcs": snap.bcs,
        "mesh": {"nx": snap.mesh.nx, "ny": snap.mesh.ny, "nz": snap.mesh.nz, "h": snap.mesh.h},
        "domain": snap.domain,
        "elem_size": snap.elem_size,
        "error": snap.error,
    })
    .to_string()
}
