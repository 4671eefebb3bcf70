//! PMU placements and channels, phasor synthesis, mixture noise and TVE.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{AdmittanceSet, BranchEnd, BusId, NetworkModel};
use crate::powerflow::BusState;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Channel {
    Voltage { bus: BusId },
    Current { bus: BusId, branch: usize, end: BranchEnd },
}

impl Channel {
    pub fn bus(&self) -> BusId {
        match *self {
            Channel::Voltage { bus } | Channel::Current { bus, .. } => bus,
        }
    }

    /// Identity-derived key for the per-element noise stream, so that
    /// adding channels never changes the noise drawn on existing ones.
    pub fn key(&self) -> u64 {
        match *self {
            Channel::Voltage { bus } => rng::mix64(bus.0 as u64),
            Channel::Current { bus, branch, end } => rng::mix64(
                (1u64 << 63) ^ ((branch as u64) << 33) ^ ((matches!(end, BranchEnd::To) as u64) << 32) ^ bus.0 as u64,
            ),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Channel::Voltage { bus } => format!("v{bus}"),
            Channel::Current { bus, branch, end } => {
                let e = match end {
                    BranchEnd::From => "f",
                    BranchEnd::To => "t",
                };
                format!("i{bus}_br{branch}{e}")
            }
        }
    }
}

/// PMUs at `buses`; each observes its bus voltage and the current entering
/// every incident in-service branch at that bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmuPlacement {
    buses: Vec<BusId>,
    channels: Vec<Channel>,
}

impl PmuPlacement {
    /// Duplicate bus ids are dropped, keeping first occurrence order.
    pub fn new(model: &NetworkModel, buses: &[BusId]) -> Result<PmuPlacement> {
        let mut placed: Vec<BusId> = Vec::with_capacity(buses.len());
        for &b in buses {
            if model.bus_index(b).is_none() {
                return Err(Error::InvalidParameter(format!("placement references unknown bus {b}")));
            }
            if !placed.contains(&b) {
                placed.push(b);
            }
        }
        let mut channels = Vec::new();
        for &bus in &placed {
            channels.push(Channel::Voltage { bus });
            for (k, br) in model.in_service_branches() {
                if br.from_bus == bus {
                    channels.push(Channel::Current {
                        bus,
                        branch: k,
                        end: BranchEnd::From,
                    });
                }
                if br.to_bus == bus {
                    channels.push(Channel::Current {
                        bus,
                        branch: k,
                        end: BranchEnd::To,
                    });
                }
            }
        }
        Ok(PmuPlacement {
            buses: placed,
            channels,
        })
    }

    pub fn buses(&self) -> &[BusId] {
        &self.buses
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_keys(&self) -> Vec<u64> {
        self.channels.iter().map(Channel::key).collect()
    }

    /// Two real features (real, imaginary part) per channel.
    pub fn feature_count(&self) -> usize {
        2 * self.channels.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.channels
            .iter()
            .flat_map(|c| {
                let n = c.name();
                [format!("{n}_re"), format!("{n}_im")]
            })
            .collect()
    }

    pub fn with_bus(&self, model: &NetworkModel, bus: BusId) -> Result<PmuPlacement> {
        let mut b = self.buses.clone();
        b.push(bus);
        PmuPlacement::new(model, &b)
    }
}

/// PMUs on every bus at the network's highest base kV.
pub fn default_hv_placement(model: &NetworkModel) -> PmuPlacement {
    let max_kv = model
        .buses()
        .iter()
        .map(|b| b.base_kv)
        .fold(f64::NEG_INFINITY, f64::max);
    let hv: Vec<BusId> = model
        .buses()
        .iter()
        .filter(|b| b.base_kv == max_kv)
        .map(|b| b.id)
        .collect();
    PmuPlacement::new(model, &hv).expect("ids come from the model")
}

/// Noiseless channel phasors in channel order.
pub fn true_phasors(
    state: &BusState,
    admittance: &AdmittanceSet,
    model: &NetworkModel,
    placement: &PmuPlacement,
) -> Result<Vec<Complex64>> {
    let v = state.voltages();
    if v.len() != admittance.y_bus.ncols() {
        return Err(Error::Dimension {
            expected: admittance.y_bus.ncols(),
            actual: v.len(),
        });
    }
    placement
        .channels()
        .iter()
        .enumerate()
        .map(|(c, ch)| match *ch {
            Channel::Voltage { bus } => Ok(v[model.bus_index(bus).expect("placement validated")]),
            Channel::Current { branch, end, .. } => {
                if !admittance.in_service.get(branch).copied().unwrap_or(false) {
                    return Err(Error::OutOfServiceChannel { channel: c, branch });
                }
                let map = match end {
                    BranchEnd::From => &admittance.y_from,
                    BranchEnd::To => &admittance.y_to,
                };
                Ok(map.row_dot(branch, &v))
            }
        })
        .collect()
}

pub fn phasors_to_features(phasors: &[Complex64], out: &mut [f64]) {
    for (p, pair) in phasors.iter().zip(out.chunks_exact_mut(2)) {
        pair[0] = p.re;
        pair[1] = p.im;
    }
}

pub fn features_to_phasors(features: &[f64]) -> Vec<Complex64> {
    features.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Two-component Gaussian mixture on phasor magnitude (percent, relative)
/// and angle (degrees, absolute). One component index is drawn per phasor
/// and shared by its magnitude and angle errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmNoiseModel {
    pub weights: [f64; 2],
    pub mag_means: [f64; 2],
    pub mag_stds: [f64; 2],
    pub ang_means: [f64; 2],
    pub ang_stds: [f64; 2],
    pub seed: u64,
}

impl GmmNoiseModel {
    /// Mixture fitted to field PMU errors: weights (0.4, 0.6), magnitude
    /// N(−0.4 %, 0.25 %) / N(0.6 %, 0.25 %), angle N(−0.2°, 0.12°) / N(0.3°, 0.12°).
    pub fn field_mixture(seed: u64) -> GmmNoiseModel {
        GmmNoiseModel {
            weights: [0.4, 0.6],
            mag_means: [-0.4, 0.6],
            mag_stds: [0.25, 0.25],
            ang_means: [-0.2, 0.3],
            ang_stds: [0.12, 0.12],
            seed,
        }
    }

    pub fn none(seed: u64) -> GmmNoiseModel {
        GmmNoiseModel {
            weights: [1.0, 0.0],
            mag_means: [0.0; 2],
            mag_stds: [0.0; 2],
            ang_means: [0.0; 2],
            ang_stds: [0.0; 2],
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> GmmNoiseModel {
        GmmNoiseModel { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        let ok = w.iter().all(|x| (0.0..=1.0).contains(x))
            && (w[0] + w[1] - 1.0).abs() < 1e-12
            && self.mag_stds.iter().chain(&self.ang_stds).all(|s| *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid noise model {self:?}")))
        }
    }

    pub fn is_identity(&self) -> bool {
        let zero = |a: [f64; 2]| a.iter().zip(&self.weights).all(|(x, w)| *x == 0.0 || *w == 0.0);
        zero(self.mag_means) && zero(self.mag_stds) && zero(self.ang_means) && zero(self.ang_stds)
    }

    /// Mean relative magnitude error in percent.
    pub fn mean_magnitude_error(&self) -> f64 {
        self.weights[0] * self.mag_means[0] + self.weights[1] * self.mag_means[1]
    }

    /// RMS angle error in degrees.
    pub fn rms_angle_error(&self) -> f64 {
        second_moment(self.weights, self.ang_means, self.ang_stds).sqrt()
    }

    /// Small-error RMS TVE, `sqrt(E[δm²] + E[δa²])` with both in per-unit/radians.
    pub fn analytic_rms_tve(&self) -> f64 {
        let m = second_moment(self.weights, self.mag_means, self.mag_stds) * 1e-4;
        let a = second_moment(self.weights, self.ang_means, self.ang_stds) * (PI / 180.0).powi(2);
        (m + a).sqrt()
    }

    /// Perturbs one phasor using the stream keyed by `(seed, sample, channel)`.
    pub fn perturb(&self, phasor: Complex64, sample: u64, channel_key: u64) -> Complex64 {
        if self.is_identity() {
            return phasor;
        }
        let mut r = rng::stream(self.seed, &[sample, channel_key]);
        let u: f64 = r.random();
        let k = if u < self.weights[0] { 0 } else { 1 };
        let zm: f64 = r.sample(StandardNormal);
        let za: f64 = r.sample(StandardNormal);
        let dm = self.mag_means[k] + self.mag_stds[k] * zm;
        let da = self.ang_means[k] + self.ang_stds[k] * za;
        let (mag, ang) = phasor.to_polar();
        Complex64::from_polar(mag * (1.0 + dm / 100.0), ang + da.to_radians())
    }
}

fn second_moment(w: [f64; 2], mu: [f64; 2], sd: [f64; 2]) -> f64 {
    (0..2).map(|k| w[k] * (mu[k] * mu[k] + sd[k] * sd[k])).sum()
}

/// Noisy copy of `phasors`; `channel_keys[i]` identifies phasor `i`.
pub fn apply_gmm_noise(
    phasors: &[Complex64],
    channel_keys: &[u64],
    sample: u64,
    noise: &GmmNoiseModel,
) -> Vec<Complex64> {
    assert_eq!(phasors.len(), channel_keys.len());
    phasors
        .iter()
        .zip(channel_keys)
        .map(|(&p, &key)| noise.perturb(p, sample, key))
        .collect()
}

/// In-place noise on an interleaved (re, im) feature row.
pub fn perturb_features(row: &mut [f64], channel_keys: &[u64], sample: u64, noise: &GmmNoiseModel) {
    if noise.is_identity() {
        return;
    }
    for (pair, &key) in row.chunks_exact_mut(2).zip(channel_keys) {
        let p = noise.perturb(Complex64::new(pair[0], pair[1]), sample, key);
        pair[0] = p.re;
        pair[1] = p.im;
    }
}

/// Zero-mean single-component model whose RMS TVE equals `tve_target`,
/// split evenly between magnitude and angle variance.
pub fn gaussian_noise_model(tve_target: f64, seed: u64) -> Result<GmmNoiseModel> {
    if !(tve_target >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "TVE target must be >= 0, got {tve_target}"
        )));
    }
    let sigma = tve_target / 2f64.sqrt();
    Ok(GmmNoiseModel {
        weights: [1.0, 0.0],
        mag_means: [0.0; 2],
        mag_stds: [sigma * 100.0, 0.0],
        ang_means: [0.0; 2],
        ang_stds: [sigma.to_degrees(), 0.0],
        seed,
    })
}

/// Total vector error `|measured − true| / |true|` per element.
pub fn compute_tve(truth: &[Complex64], measured: &[Complex64]) -> Result<Vec<f64>> {
    if truth.len() != measured.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: measured.len(),
        });
    }
    truth
        .iter()
        .zip(measured)
        .enumerate()
        .map(|(i, (t, m))| {
            let n = t.norm();
            if n == 0.0 {
                Err(Error::ZeroPhasor { index: i })
            } else {
                Ok((m - t).norm() / n)
            }
        })
        .collect()
}

/// Which noise to put on PMU phasors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    None,
    Gaussian { tve: f64 },
    Gmm,
}

impl NoiseSpec {
    pub fn model(&self, seed: u64) -> Result<GmmNoiseModel> {
        match *self {
            NoiseSpec::None => Ok(GmmNoiseModel::none(seed)),
            NoiseSpec::Gaussian { tve } => gaussian_noise_model(tve, seed),
            NoiseSpec::Gmm => Ok(GmmNoiseModel::field_mixture(seed)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::Gmm => "gmm",
        }
    }
}

impl std::str::FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseSpec::None),
            "gaussian" => Ok(NoiseSpec::Gaussian { tve: 0.01 }),
            "gmm" => Ok(NoiseSpec::Gmm),
            other => Err(Error::InvalidParameter(format!(
                "unknown noise '{other}' (expected none, gaussian or gmm)"
            ))),
        }
    }
}
