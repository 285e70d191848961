//! Boundary-condition state over the 26 boundary entities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{BoundaryEntity, MeshError, MeshTopology};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BcError {
    #[error(transparent)]
    Entity(#[from] MeshError),
    #[error("force vector must be finite, got {0:?}")]
    NonFiniteForce([f64; 3]),
}

/// State of one entity. Exactly one kind is active at a time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum EntityBc {
    #[default]
    Free,
    Clamped,
    /// Total force in Newtons over the entity's closed node set.
    Traction { force: [f64; 3] },
}

/// Entity states keyed by entity; absent entries are free (zero traction).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryConditions {
    entities: BTreeMap<BoundaryEntity, EntityBc>,
}

#[derive(Serialize, Deserialize)]
struct BcJson {
    entities: BTreeMap<String, EntityBc>,
}

impl Serialize for BoundaryConditions {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let entities = self.entities.iter().map(|(e, bc)| (e.id(), *bc)).collect();
        BcJson { entities }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundaryConditions {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = BcJson::deserialize(d)?;
        let mut bcs = BoundaryConditions::default();
        for (id, bc) in raw.entities {
            let entity: BoundaryEntity = id.parse().map_err(D::Error::custom)?;
            match bc {
                EntityBc::Free => {}
                EntityBc::Clamped => {
                    bcs.entities.insert(entity, bc);
                }
                EntityBc::Traction { force } => {
                    bcs.drag(entity, force).map_err(D::Error::custom)?;
                }
            }
        }
        Ok(bcs)
    }
}

impl BoundaryConditions {
    pub fn get(&self, entity: BoundaryEntity) -> EntityBc {
        self.entities.get(&entity).copied().unwrap_or_default()
    }

    pub fn get_id(&self, id: &str) -> Result<EntityBc, BcError> {
        Ok(self.get(id.parse()?))
    }

    /// Non-free entries in entity order.
    pub fn iter(&self) -> impl Iterator<Item = (BoundaryEntity, EntityBc)> + '_ {
        self.entities.iter().map(|(e, bc)| (*e, *bc))
    }

    pub fn clamped(&self) -> impl Iterator<Item = BoundaryEntity> + '_ {
        self.iter().filter(|(_, bc)| *bc == EntityBc::Clamped).map(|(e, _)| e)
    }

    pub fn tractions(&self) -> impl Iterator<Item = (BoundaryEntity, [f64; 3])> + '_ {
        self.iter().filter_map(|(e, bc)| match bc {
            EntityBc::Traction { force } => Some((e, force)),
            _ => None,
        })
    }

    pub fn set(&mut self, entity: BoundaryEntity, bc: EntityBc) {
        match bc {
            EntityBc::Free => {
                self.entities.remove(&entity);
            }
            _ => {
                self.entities.insert(entity, bc);
            }
        }
    }

    /// Tap cycle: traction → free, free → clamped, clamped → free.
    pub fn tap(&mut self, entity: BoundaryEntity) -> EntityBc {
        let next = match self.get(entity) {
            EntityBc::Free => EntityBc::Clamped,
            EntityBc::Clamped | EntityBc::Traction { .. } => EntityBc::Free,
        };
        self.set(entity, next);
        next
    }

    pub fn tap_id(&mut self, id: &str) -> Result<EntityBc, BcError> {
        Ok(self.tap(id.parse()?))
    }

    /// Assigns a traction, overriding any prior state. A zero vector is a no-op.
    pub fn drag(&mut self, entity: BoundaryEntity, force: [f64; 3]) -> Result<EntityBc, BcError> {
        if !force.iter().all(|f| f.is_finite()) {
            return Err(BcError::NonFiniteForce(force));
        }
        if force.iter().all(|f| *f == 0.0) {
            return Ok(self.get(entity));
        }
        let bc = EntityBc::Traction { force };
        self.set(entity, bc);
        Ok(bc)
    }

    pub fn drag_id(&mut self, id: &str, force: [f64; 3]) -> Result<EntityBc, BcError> {
        self.drag(id.parse()?, force)
    }

    /// Face x- clamped, unit downward load on the free tip edge at (x+, z-).
    pub fn preset_cantilever() -> Self {
        let mut bcs = Self::default();
        bcs.set(entity("face:x-"), EntityBc::Clamped);
        bcs.set(entity("edge:x+z-"), EntityBc::Traction { force: [0.0, 0.0, -1.0] });
        bcs
    }

    /// Both bottom edges along y clamped, unit downward load spread over the top face.
    pub fn preset_bridge() -> Self {
        let mut bcs = Self::default();
        bcs.set(entity("edge:x-z-"), EntityBc::Clamped);
        bcs.set(entity("edge:x+z-"), EntityBc::Clamped);
        bcs.set(entity("face:z+"), EntityBc::Traction { force: [0.0, 0.0, -1.0] });
        bcs
    }

    /// Nodal force vector: each traction split equally over its closed node set.
    pub fn assemble_force(&self, mesh: &MeshTopology) -> Vec<f64> {
        let mut f = vec![0.0; mesh.dof_count()];
        for (e, force) in self.tractions() {
            let nodes = e.nodes(mesh, true);
            let share = nodes.len() as f64;
            for n in nodes {
                for a in 0..3 {
                    f[3 * n + a] += force[a] / share;
                }
            }
        }
        f
    }

    /// Nodes in the closed node set of any clamped entity, ascending.
    pub fn clamped_nodes(&self, mesh: &MeshTopology) -> Vec<usize> {
        let set: BTreeSet<usize> = self.clamped().flat_map(|e| e.nodes(mesh, true)).collect();
        set.into_iter().collect()
    }

    /// All three DOFs of every clamped node, sorted and duplicate-free.
    pub fn clamped_dofs(&self, mesh: &MeshTopology) -> Vec<usize> {
        self.clamped_nodes(mesh).into_iter().flat_map(|n| [3 * n, 3 * n + 1, 3 * n + 2]).collect()
    }

    /// Nodes with a nonzero assembled load.
    pub fn loaded_nodes(&self, mesh: &MeshTopology) -> Vec<usize> {
        let f = self.assemble_force(mesh);
        (0..mesh.node_count()).filter(|n| f[3 * n..3 * n + 3].iter().any(|v| *v != 0.0)).collect()
    }

    /// Sum of all traction vectors.
    pub fn total_force(&self) -> [f64; 3] {
        self.tractions().fold([0.0; 3], |acc, (_, f)| [acc[0] + f[0], acc[1] + f[1], acc[2] + f[2]])
    }
}

fn entity(id: &str) -> BoundaryEntity {
    id.parse().expect("preset entity ids are valid")
}
