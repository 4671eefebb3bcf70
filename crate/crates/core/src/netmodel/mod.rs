//! Network data: buses, branches, generators, plus the admittance and
//! flow-to-injection conversion structures derived from them.

mod admittance;
mod case;
mod conversion;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{branch_pi, build_admittance, AdmittanceSet, BranchPi, SparseMatrix};
pub use case::{parse_case, read_case};
pub use conversion::{build_conversion, BranchEnd, ConversionMatrix, FlowEnd};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// Bus data. Loads are in MW/MVAr, shunts in per-unit on the system base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub load_p: f64,
    pub load_q: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub base_kv: f64,
    /// Regulated magnitude for PV/slack buses; the case-file magnitude otherwise.
    pub v_setpoint: f64,
}

impl Bus {
    pub fn has_load(&self) -> bool {
        self.load_p != 0.0 || self.load_q != 0.0
    }
}

/// Branch in per-unit. `phase_shift` is in radians; `tap_ratio` is 1.0 for lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    pub total_charging_b: f64,
    pub tap_ratio: f64,
    pub phase_shift: f64,
    pub in_service: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub v_setpoint: f64,
    pub in_service: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetworkData {
    name: String,
    base_power: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

/// A validated network. Construct through [`NetworkModel::new`],
/// [`parse_case`] or deserialization, all of which enforce the same checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct NetworkModel {
    name: String,
    base_power: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    index: HashMap<BusId, usize>,
    slack: usize,
}

impl PartialEq for NetworkModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_power == other.base_power
            && self.buses == other.buses
            && self.branches == other.branches
            && self.generators == other.generators
    }
}

impl TryFrom<NetworkData> for NetworkModel {
    type Error = Error;

    fn try_from(d: NetworkData) -> Result<Self> {
        NetworkModel::new(d.name, d.base_power, d.buses, d.branches, d.generators)
    }
}

impl From<NetworkModel> for NetworkData {
    fn from(m: NetworkModel) -> Self {
        NetworkData {
            name: m.name,
            base_power: m.base_power,
            buses: m.buses,
            branches: m.branches,
            generators: m.generators,
        }
    }
}

impl NetworkModel {
    pub fn new(
        name: impl Into<String>,
        base_power: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidNetwork(msg));
        if !(base_power > 0.0 && base_power.is_finite()) {
            return invalid(format!("base power must be positive, got {base_power}"));
        }
        if buses.is_empty() {
            return invalid("network has no buses".into());
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", bus.id));
            }
            if !(bus.base_kv > 0.0) {
                return invalid(format!("bus {} has non-positive base kV", bus.id));
            }
            if bus.kind != BusKind::Pq && !(bus.v_setpoint > 0.5 && bus.v_setpoint < 1.5) {
                return invalid(format!(
                    "bus {} voltage setpoint {} outside (0.5, 1.5)",
                    bus.id, bus.v_setpoint
                ));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return invalid("no slack bus".into()),
            _ => return invalid(format!("{} slack buses, expected exactly one", slacks.len())),
        };
        for (k, br) in branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !index.contains_key(&end) {
                    return invalid(format!("branch {k} references unknown bus {end}"));
                }
            }
            if br.from_bus == br.to_bus {
                return invalid(format!("branch {k} is a self-loop at bus {}", br.from_bus));
            }
            if !(br.tap_ratio > 0.0) {
                return invalid(format!("branch {k} has non-positive tap ratio"));
            }
        }
        for (g, gen) in generators.iter().enumerate() {
            if !index.contains_key(&gen.bus) {
                return invalid(format!("generator {g} references unknown bus {}", gen.bus));
            }
        }
        Ok(NetworkModel {
            name: name.into(),
            base_power,
            buses,
            branches,
            generators,
            index,
            slack,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// System base in MVA.
    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Buses carrying nonzero active or reactive load, in bus order.
    pub fn load_buses(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].has_load()).collect()
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.in_service)
    }

    /// Bus indices adjacent through in-service branches, deduplicated and sorted.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (_, br) in self.in_service_branches() {
            let f = self.index[&br.from_bus];
            let t = self.index[&br.to_bus];
            adj[f].push(t);
            adj[t].push(f);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Returns an error naming the first bus with nonzero shunt conductance.
    pub fn require_lossless_shunts(&self) -> Result<()> {
        match self.buses.iter().find(|b| b.shunt_g != 0.0) {
            Some(b) => Err(Error::ShuntConductance { bus: b.id.0 }),
            None => Ok(()),
        }
    }

    /// Copy with a different branch status vector.
    pub fn with_branch_status(&self, in_service: &[bool]) -> Result<NetworkModel> {
        if in_service.len() != self.branches.len() {
            return Err(Error::Dimension {
                expected: self.branches.len(),
                actual: in_service.len(),
            });
        }
        let mut m = self.clone();
        for (br, &s) in m.branches.iter_mut().zip(in_service) {
            br.in_service = s;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<NetworkModel> {
        serde_json::from_str(text).map_err(|e| Error::format("<json>", e))
    }
}

/// A network together with the derived structures every downstream stage
/// needs. Immutable and cheap to share by reference.
#[derive(Clone, Debug)]
pub struct Grid {
    pub model: NetworkModel,
    pub admittance: AdmittanceSet,
    pub conversion: ConversionMatrix,
}

impl Grid {
    pub fn new(model: NetworkModel) -> Result<Grid> {
        let admittance = build_admittance(&model)?;
        let conversion = build_conversion(&model);
        Ok(Grid {
            model,
            admittance,
            conversion,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.model.bus_count()
    }

    pub fn flow_count(&self) -> usize {
        self.conversion.flow_count()
    }

    /// Flows plus injections.
    pub fn target_count(&self) -> usize {
        self.conversion.flow_count() + self.model.bus_count()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    pub fn bus(id: u32, kind: BusKind, load_p: f64, base_kv: f64) -> Bus {
        Bus {
            id: BusId(id),
            kind,
            load_p,
            load_q: load_p * 0.3,
            shunt_g: 0.0,
            shunt_b: 0.0,
            base_kv,
            v_setpoint: 1.0,
        }
    }

    pub fn line(from: u32, to: u32, r: f64, x: f64) -> Branch {
        Branch {
            from_bus: BusId(from),
            to_bus: BusId(to),
            r,
            x,
            total_charging_b: 0.0,
            tap_ratio: 1.0,
            phase_shift: 0.0,
            in_service: true,
        }
    }

    /// Slack at bus 1, PQ elsewhere, lines between the listed pairs.
    pub fn network(n: u32, edges: &[(u32, u32)]) -> NetworkModel {
        let buses = (1..=n)
            .map(|i| {
                let kind = if i == 1 { BusKind::Slack } else { BusKind::Pq };
                bus(i, kind, if i == 1 { 0.0 } else { 10.0 * i as f64 }, 138.0)
            })
            .collect();
        let branches = edges.iter().map(|&(f, t)| line(f, t, 0.01, 0.1)).collect();
        let gens = vec![Generator {
            bus: BusId(1),
            p_mw: 0.0,
            q_mvar: 0.0,
            v_setpoint: 1.0,
            in_service: true,
        }];
        NetworkModel::new("test", 100.0, buses, branches, gens).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn rejects_duplicate_ids_and_missing_slack() {
        let b = vec![bus(1, BusKind::Slack, 0.0, 1.0), bus(1, BusKind::Pq, 0.0, 1.0)];
        assert!(matches!(
            NetworkModel::new("x", 100.0, b, vec![], vec![]),
            Err(Error::InvalidNetwork(m)) if m.contains("duplicate")
        ));
        let b = vec![bus(1, BusKind::Pq, 0.0, 1.0)];
        assert!(NetworkModel::new("x", 100.0, b, vec![], vec![]).is_err());
    }

    #[test]
    fn rejects_non_positive_base() {
        let b = vec![bus(1, BusKind::Slack, 0.0, 1.0)];
        assert!(NetworkModel::new("x", 0.0, b, vec![], vec![]).is_err());
    }

    #[test]
    fn adjacency_dedups_parallel_branches() {
        let m = network(3, &[(1, 2), (1, 2), (2, 3)]);
        assert_eq!(m.adjacency(), vec![vec![1], vec![0, 2], vec![1]]);
    }

    #[test]
    fn json_round_trip() {
        let m = network(4, &[(1, 2), (2, 3), (3, 4)]);
        let back = NetworkModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.slack_index(), 0);
    }

    #[test]
    fn json_with_dangling_branch_is_rejected() {
        let m = network(2, &[(1, 2)]);
        let text = m.to_json().replace("\"to_bus\": 2", "\"to_bus\": 999");
        assert!(NetworkModel::from_json(&text).is_err());
    }
}
