use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BusId, NetworkModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchEnd {
    From,
    To,
}

/// One directed branch-end active-power flow variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowEnd {
    pub branch: usize,
    pub end: BranchEnd,
}

/// Flow-to-injection maps: `a` sums the branch-end flows at each bus and
/// `b = [I; a]` lifts a flow vector to the stacked flow + injection vector.
///
/// Flow variables are both ends of every in-service branch, from-end first,
/// in branch order; injections follow bus order.
#[derive(Clone, Debug)]
pub struct ConversionMatrix {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub flow_index: Vec<FlowEnd>,
    pub injection_index: Vec<BusId>,
    /// Bus index each flow variable feeds.
    flow_bus: Vec<usize>,
}

pub fn build_conversion(model: &NetworkModel) -> ConversionMatrix {
    let mut flow_index = Vec::new();
    let mut flow_bus = Vec::new();
    for (k, br) in model.in_service_branches() {
        flow_index.push(FlowEnd {
            branch: k,
            end: BranchEnd::From,
        });
        flow_bus.push(model.bus_index(br.from_bus).expect("validated"));
        flow_index.push(FlowEnd {
            branch: k,
            end: BranchEnd::To,
        });
        flow_bus.push(model.bus_index(br.to_bus).expect("validated"));
    }
    let nb = model.bus_count();
    let mb = flow_index.len();
    let mut a = DMatrix::zeros(nb, mb);
    for (k, &bus) in flow_bus.iter().enumerate() {
        a[(bus, k)] = 1.0;
    }
    let mut b = DMatrix::zeros(mb + nb, mb);
    b.view_mut((0, 0), (mb, mb)).fill_with_identity();
    b.view_mut((mb, 0), (nb, mb)).copy_from(&a);
    ConversionMatrix {
        a,
        b,
        flow_index,
        injection_index: model.buses().iter().map(|b| b.id).collect(),
        flow_bus,
    }
}

impl ConversionMatrix {
    /// Number of flow variables (`m_b`).
    pub fn flow_count(&self) -> usize {
        self.flow_index.len()
    }

    pub fn bus_count(&self) -> usize {
        self.injection_index.len()
    }

    pub fn flow_bus(&self) -> &[usize] {
        &self.flow_bus
    }

    /// `a * flows` without touching the dense matrix.
    pub fn injections_from_flows(&self, flows: &[f64]) -> Vec<f64> {
        let mut inj = vec![0.0; self.bus_count()];
        for (&bus, &f) in self.flow_bus.iter().zip(flows) {
            inj[bus] += f;
        }
        inj
    }

    /// `(BᵀB)⁻¹Bᵀ`, the Moore–Penrose inverse of `b` (full column rank).
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let btb = self.b.transpose() * &self.b;
        let chol = btb.cholesky().expect("BᵀB = I + AᵀA is symmetric positive definite");
        chol.solve(&self.b.transpose())
    }

    /// Stable fingerprint of the flow and injection orderings.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.flow_index {
            h.update((f.branch as u64).to_le_bytes());
            h.update([matches!(f.end, BranchEnd::To) as u8]);
        }
        h.update(b"|");
        for (id, bus) in self.injection_index.iter().zip(&self.flow_bus) {
            h.update(id.0.to_le_bytes());
            h.update((*bus as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
