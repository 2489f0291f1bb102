//! Signed-weight crossbar of CTF synapse pairs.
//!
//! Each cross-point holds two devices and encodes `w = k * (g1 - g2)`. Reads
//! are noiseless matrix-vector products; updates follow the stochastic
//! pulse-train scheme: every cross-point sees a Bernoulli train of length `PL`
//! on its row (`C * x`) and column (`C * |delta|`), and each coincidence fires
//! one programming pulse on one of the two devices.
//!
//! Layout is row-major with `rows = outputs` and `cols = inputs`, so
//! `forward` takes a `cols`-vector and `backward` a `rows`-vector.

use std::io::{Read, Write};
use std::ops::AddAssign;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::device_model::{DeviceModel, Direction};
use crate::error::{Error, Result};

const SNAPSHOT_MAGIC: &[u8; 4] = b"CTFX";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapsePair {
    pub g1: f64,
    pub g2: f64,
}

/// Polarity scheme used to route coincidences onto the two devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateCycle {
    /// Potentiation only: `g1` for negative gradients, `g2` otherwise.
    #[default]
    Positive,
    /// Depression only: `g2` for negative gradients, `g1` otherwise.
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulsePlan {
    train_length: u32,
    input_scale: f64,
    cycle: UpdateCycle,
}

impl PulsePlan {
    pub fn new(train_length: u32, input_scale: f64, cycle: UpdateCycle) -> Result<Self> {
        if train_length == 0 {
            return Err(Error::InvalidPlan("pulse train length must be >= 1".into()));
        }
        // a zero scale is accepted: it is what a zero step size maps to
        if !(input_scale >= 0.0 && input_scale.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "input scale must be finite and >= 0, got {input_scale}"
            )));
        }
        Ok(Self {
            train_length,
            input_scale,
            cycle,
        })
    }

    /// Plan whose expected update equals an SGD step of size `alpha`.
    pub fn for_step_size(
        alpha: f64,
        train_length: u32,
        k: f64,
        device: &DeviceModel,
        cycle: UpdateCycle,
    ) -> Result<Self> {
        let c = compute_input_scale(alpha, train_length, k, device)?;
        Self::new(train_length, c, cycle)
    }

    pub fn train_length(&self) -> u32 {
        self.train_length
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn cycle(&self) -> UpdateCycle {
        self.cycle
    }
}

/// `C = sqrt(alpha / (PL * Δ⁺(g_center) * k))`.
///
/// With this scale the expected number of coincidences is `PL * C² * x * |δ|`,
/// so the expected weight change is `-alpha * δ * x` near the center.
pub fn compute_input_scale(
    alpha: f64,
    train_length: u32,
    k: f64,
    device: &DeviceModel,
) -> Result<f64> {
    if !(alpha >= 0.0) || train_length == 0 || !(k > 0.0) {
        return Err(Error::InvalidPlan(format!(
            "input scale needs alpha >= 0, PL >= 1, k > 0 (got {alpha}, {train_length}, {k})"
        )));
    }
    Ok((alpha / (train_length as f64 * device.center_step() * k)).sqrt())
}

/// Counters from one or more stochastic updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    /// Programming pulses fired.
    pub coincidences: u64,
    /// Row or column probabilities that exceeded 1 and were clipped.
    pub probability_clips: u64,
    /// Pulses whose target fell outside the conductance window.
    pub saturation_clamps: u64,
}

impl AddAssign for UpdateStats {
    fn add_assign(&mut self, rhs: Self) {
        self.coincidences += rhs.coincidences;
        self.probability_clips += rhs.probability_clips;
        self.saturation_clamps += rhs.saturation_clamps;
    }
}

/// `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KaimingUniform {
    bound: f64,
}

impl KaimingUniform {
    pub fn new(fan_in: usize) -> Self {
        assert!(fan_in > 0, "fan_in must be positive");
        Self {
            bound: (6.0 / fan_in as f64).sqrt(),
        }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl Distribution<f64> for KaimingUniform {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(-self.bound..=self.bound)
    }
}

#[derive(Debug, Clone)]
pub struct CrossbarArray {
    rows: usize,
    cols: usize,
    k: f64,
    device: Arc<DeviceModel>,
    cells: Vec<SynapsePair>,
}

impl CrossbarArray {
    /// Programs every cross-point around the device center so that it reads
    /// back a weight drawn from `sampler`.
    pub fn initialize<D, R>(
        rows: usize,
        cols: usize,
        k: f64,
        device: Arc<DeviceModel>,
        sampler: &D,
        rng: &mut R,
    ) -> Result<Self>
    where
        D: Distribution<f64> + ?Sized,
        R: Rng + ?Sized,
    {
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            weights.push(sampler.sample(rng));
        }
        Self::from_weights(rows, cols, k, device, &weights)
    }

    /// Places each weight symmetrically around the center: `g = c ± w / 2k`.
    pub fn from_weights(
        rows: usize,
        cols: usize,
        k: f64,
        device: Arc<DeviceModel>,
        weights: &[f64],
    ) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "weight scale k must be > 0, got {k}"
            )));
        }
        if weights.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: weights.len(),
            });
        }
        let c = device.g_center();
        // pairs sit symmetrically about the center, so the tighter side binds
        let available = (c - device.g_min()).min(device.g_max() - c);
        let cells = weights
            .iter()
            .map(|&w0| {
                let offset = w0 / (2.0 * k);
                if offset.abs() > available {
                    return Err(Error::InitRange {
                        w0,
                        needed: offset.abs(),
                        available,
                    });
                }
                Ok(SynapsePair {
                    g1: c + offset,
                    g2: c - offset,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows,
            cols,
            k,
            device,
            cells,
        })
    }

    pub fn from_cells(
        rows: usize,
        cols: usize,
        k: f64,
        device: Arc<DeviceModel>,
        cells: Vec<SynapsePair>,
    ) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: cells.len(),
            });
        }
        if let Some(bad) = cells
            .iter()
            .flat_map(|c| [c.g1, c.g2])
            .find(|g| !device.contains(*g))
        {
            return Err(Error::Domain {
                g: bad,
                min: device.g_min(),
                max: device.g_max(),
            });
        }
        if !(k > 0.0) {
            return Err(Error::InvalidPlan(format!(
                "weight scale k must be > 0, got {k}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            k,
            device,
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    pub fn cells(&self) -> &[SynapsePair] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> SynapsePair {
        self.cells[row * self.cols + col]
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        let c = self.cell(row, col);
        self.k * (c.g1 - c.g2)
    }

    /// Row-major `k * (g1 - g2)`.
    pub fn read_weights(&self) -> Vec<f64> {
        self.cells.iter().map(|c| self.k * (c.g1 - c.g2)).collect()
    }

    /// Largest representable weight magnitude; infinite on an open window.
    pub fn weight_bound(&self) -> f64 {
        self.k * (self.device.g_max() - self.device.g_min())
    }

    /// `W x`, read through the column currents.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        let active: Vec<(usize, f64)> = x
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        Ok(self
            .cells
            .chunks_exact(self.cols)
            .map(|row| {
                let s: f64 = active
                    .iter()
                    .map(|&(j, v)| (row[j].g1 - row[j].g2) * v)
                    .sum();
                self.k * s
            })
            .collect())
    }

    /// `Wᵀ δ`, read through the row currents.
    pub fn backward(&self, delta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, delta.len())?;
        let mut out = vec![0.0; self.cols];
        for (row, &d) in self.cells.chunks_exact(self.cols).zip(delta) {
            if d == 0.0 {
                continue;
            }
            let scaled = self.k * d;
            for (o, c) in out.iter_mut().zip(row) {
                *o += scaled * (c.g1 - c.g2);
            }
        }
        Ok(out)
    }

    /// Stochastic outer-product update `W ← W - α δ xᵀ` in expectation.
    ///
    /// For each cross-point the coincidence count of two independent
    /// Bernoulli trains of length `PL` (probabilities `min(1, C x_j)` and
    /// `min(1, C |δ_i|)`) is drawn, then that many noisy pulses are applied
    /// one after another, each at the device's current conductance.
    pub fn stochastic_update<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        delta: &[f64],
        plan: &PulsePlan,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        check_len(self.cols, x.len())?;
        check_len(self.rows, delta.len())?;
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeInput { index, value });
        }

        let c = plan.input_scale;
        let mut stats = UpdateStats::default();
        let mut clip = |p: f64| {
            if p > 1.0 {
                stats.probability_clips += 1;
                1.0
            } else {
                p
            }
        };
        let col_p: Vec<(usize, f64)> = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(j, v)| (j, clip(c * v)))
            .filter(|(_, p)| *p > 0.0)
            .collect();
        let row_p: Vec<(usize, f64, bool)> = delta
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != 0.0 && d.is_finite())
            .map(|(i, d)| (i, clip(c * d.abs()), *d < 0.0))
            .filter(|(_, p, _)| *p > 0.0)
            .collect();

        let train_length = plan.train_length;
        let device = &*self.device;
        for &(i, pd, negative) in &row_p {
            let row = &mut self.cells[i * self.cols..(i + 1) * self.cols];
            for &(j, px) in &col_p {
                let count = coincidences(train_length, px * pd, rng);
                if count == 0 {
                    continue;
                }
                let cell = &mut row[j];
                let (g, direction) = match (plan.cycle, negative) {
                    (UpdateCycle::Positive, true) => (&mut cell.g1, Direction::Potentiate),
                    (UpdateCycle::Positive, false) => (&mut cell.g2, Direction::Potentiate),
                    (UpdateCycle::Negative, true) => (&mut cell.g2, Direction::Depress),
                    (UpdateCycle::Negative, false) => (&mut cell.g1, Direction::Depress),
                };
                for _ in 0..count {
                    let z: f64 = rng.sample(StandardNormal);
                    let outcome = device.pulse_with(*g, direction, z);
                    *g = outcome.conductance;
                    stats.saturation_clamps += outcome.clamped as u64;
                }
                stats.coincidences += count as u64;
            }
        }
        Ok(stats)
    }

    /// Fraction of devices sitting on either edge of the window.
    pub fn saturation_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        let (lo, hi) = (self.device.g_min(), self.device.g_max());
        let saturated = self
            .cells
            .iter()
            .flat_map(|c| [c.g1, c.g2])
            .filter(|&g| g <= lo || g >= hi)
            .count();
        saturated as f64 / (2 * self.cells.len()) as f64
    }

    /// Little-endian snapshot: `CTFX`, version, rows, cols, k, then
    /// row-major `(g1, g2)` pairs.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        for c in &self.cells {
            w.write_all(&c.g1.to_le_bytes())?;
            w.write_all(&c.g2.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R, device: Arc<DeviceModel>) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "crossbar snapshot",
            detail,
        };
        let mut header = [0u8; 24];
        r.read_exact(&mut header)
            .map_err(|e| bad(format!("short header: {e}")))?;
        if &header[0..4] != SNAPSHOT_MAGIC {
            return Err(bad(format!("bad magic {:?}", &header[0..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != SNAPSHOT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let rows = u32_at(8) as usize;
        let cols = u32_at(12) as usize;
        let k = f64::from_le_bytes(header[16..24].try_into().unwrap());

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = rows * cols * 16;
        if payload.len() != expected {
            return Err(bad(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let cells = payload
            .chunks_exact(16)
            .map(|b| SynapsePair {
                g1: f64::from_le_bytes(b[0..8].try_into().unwrap()),
                g2: f64::from_le_bytes(b[8..16].try_into().unwrap()),
            })
            .collect();
        Self::from_cells(rows, cols, k, device, cells)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Number of coincidences between two independent Bernoulli trains of length
/// `n`, i.e. a `Binomial(n, p)` draw by CDF inversion of one uniform.
#[inline]
fn coincidences<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if p >= 1.0 {
        return n;
    }
    let u: f64 = rng.random();
    let q = 1.0 - p;
    let ratio = p / q;
    let mut pmf = q.powi(n as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while u >= cdf && k < n {
        pmf *= ratio * (n - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pmf;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn device(noise: f64) -> Arc<DeviceModel> {
        Arc::new(DeviceModel::published(noise))
    }

    fn single(k: f64, noise: f64) -> CrossbarArray {
        CrossbarArray::from_weights(1, 1, k, device(noise), &[0.0]).unwrap()
    }

    #[test]
    fn reads_scaled_difference() {
        let arr = CrossbarArray::from_cells(
            1,
            1,
            6.0,
            device(0.0),
            vec![SynapsePair {
                g1: -0.19,
                g2: -0.21,
            }],
        )
        .unwrap();
        assert_relative_eq!(arr.read_weights()[0], 0.12, max_relative = 1e-12);
    }

    #[test]
    fn balanced_pairs_read_zero() {
        let arr = CrossbarArray::from_weights(3, 4, 6.0, device(0.0), &[0.0; 12]).unwrap();
        assert!(arr.read_weights().iter().all(|&w| w == 0.0));
        assert!(arr.cells().iter().all(|c| c.g1 == -0.2 && c.g2 == -0.2));
    }

    #[test]
    fn initialization_places_pairs_around_center() {
        let arr = CrossbarArray::from_weights(1, 1, 6.0, device(0.0), &[0.12]).unwrap();
        let c = arr.cell(0, 0);
        assert_relative_eq!(c.g1, -0.19, max_relative = 1e-12);
        assert_relative_eq!(c.g2, -0.21, max_relative = 1e-12);
    }

    #[test]
    fn initialization_round_trips_sampled_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sampler = KaimingUniform::new(256);
        let arr = CrossbarArray::initialize(16, 256, 6.0, device(0.0), &sampler, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for w in arr.read_weights() {
            let w0 = sampler.sample(&mut rng);
            assert_relative_eq!(w, w0, epsilon = 1e-15);
            assert!(w0.abs() <= (6.0f64 / 256.0).sqrt());
        }
    }

    #[test]
    fn small_k_is_an_init_error() {
        let r = CrossbarArray::from_weights(1, 1, 0.1, device(0.0), &[0.5]);
        assert!(matches!(r, Err(Error::InitRange { .. })));
    }

    #[test]
    fn forward_and_backward_match_dense_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arr =
            CrossbarArray::initialize(4, 3, 20.0, device(0.0), &KaimingUniform::new(3), &mut rng)
                .unwrap();
        let w = arr.read_weights();
        let x = [0.3, 0.0, 1.7];
        let y = arr.forward(&x).unwrap();
        for i in 0..4 {
            let expected: f64 = (0..3).map(|j| w[i * 3 + j] * x[j]).sum();
            assert_relative_eq!(y[i], expected, max_relative = 1e-12);
        }
        let d = [0.5, -1.0, 0.0, 2.0];
        let b = arr.backward(&d).unwrap();
        for j in 0..3 {
            let expected: f64 = (0..4).map(|i| w[i * 3 + j] * d[i]).sum();
            assert_relative_eq!(b[j], expected, max_relative = 1e-12);
        }
        // basis probes
        let col = arr.forward(&[0.0, 1.0, 0.0]).unwrap();
        let row = arr.backward(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        for i in 0..4 {
            assert_eq!(col[i], arr.weight(i, 1));
        }
        for j in 0..3 {
            assert_eq!(row[j], arr.weight(2, j));
        }
        assert!(arr.forward(&[0.0; 3]).unwrap().iter().all(|&v| v == 0.0));
        assert!(arr.backward(&[0.0; 4]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(
            arr.forward(&[1.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            arr.backward(&[1.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_delta_fires_nothing() {
        let mut arr = single(6.0, 1.0);
        let plan = PulsePlan::new(10, 1.27, UpdateCycle::Positive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = arr
            .stochastic_update(&[1.0], &[0.0], &plan, &mut rng)
            .unwrap();
        assert_eq!(stats.coincidences, 0);
        assert_eq!(arr.cell(0, 0), SynapsePair { g1: -0.2, g2: -0.2 });
    }

    #[test]
    fn certain_trains_fire_every_slot() {
        let dev = device(0.0);
        for sign in [-1.0, 1.0] {
            let mut arr = single(6.0, 0.0);
            let plan = PulsePlan::new(10, 1.0, UpdateCycle::Positive).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let stats = arr
                .stochastic_update(&[1.0], &[sign], &plan, &mut rng)
                .unwrap();
            assert_eq!(stats.coincidences, 10);
            let mut g = -0.2;
            let mut expected = 0.0;
            for _ in 0..10 {
                let step = dev.delta_potentiate(g).unwrap();
                expected += step;
                g += step;
            }
            assert_relative_eq!(
                arr.weight(0, 0),
                -sign * 6.0 * expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn negative_input_is_rejected_before_mutation() {
        let mut arr = CrossbarArray::from_weights(1, 2, 6.0, device(0.0), &[0.0, 0.0]).unwrap();
        let before = arr.cells().to_vec();
        let plan = PulsePlan::new(10, 1.0, UpdateCycle::Positive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = arr.stochastic_update(&[1.0, -0.1], &[-1.0], &plan, &mut rng);
        assert!(matches!(r, Err(Error::NegativeInput { index: 1, .. })));
        assert_eq!(arr.cells(), &before[..]);
    }

    #[test]
    fn input_scale_plug_in() {
        // sqrt(0.01 / (10 * 1.0288e-4 * 6)), mpmath
        let c = compute_input_scale(0.01, 10, 6.0, &DeviceModel::published(0.0)).unwrap();
        assert_relative_eq!(c, 1.272_795_000_949_620_8, max_relative = 1e-12);
        let c4 = compute_input_scale(0.04, 10, 6.0, &DeviceModel::published(0.0)).unwrap();
        assert_relative_eq!(c4, 2.0 * c, max_relative = 1e-12);
        assert_eq!(
            compute_input_scale(0.0, 10, 6.0, &DeviceModel::published(0.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn probability_clips_are_counted() {
        let mut arr = CrossbarArray::from_weights(2, 2, 6.0, device(0.0), &[0.0; 4]).unwrap();
        let plan = PulsePlan::new(10, 2.0, UpdateCycle::Positive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stats = arr
            .stochastic_update(&[0.9, 0.1], &[-0.6, 0.2], &plan, &mut rng)
            .unwrap();
        assert_eq!(stats.probability_clips, 2);
    }

    #[test]
    fn bounded_window_saturates_and_counts() {
        let dev = Arc::new(DeviceModel::published_bounded(0.0));
        let mut arr = CrossbarArray::from_cells(
            1,
            1,
            6.0,
            dev,
            vec![SynapsePair {
                g1: -0.115,
                g2: -0.2,
            }],
        )
        .unwrap();
        let plan = PulsePlan::new(10, 1.0, UpdateCycle::Positive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stats = arr
            .stochastic_update(&[1.0], &[-1.0], &plan, &mut rng)
            .unwrap();
        assert_eq!(stats.saturation_clamps, 10);
        assert_eq!(arr.cell(0, 0).g1, -0.115);
        assert_eq!(arr.saturation_fraction(), 0.5);
    }

    #[test]
    fn negative_cycle_depresses() {
        let mut arr = single(6.0, 0.0);
        let plan = PulsePlan::new(10, 1.0, UpdateCycle::Negative).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        arr.stochastic_update(&[1.0], &[-1.0], &plan, &mut rng)
            .unwrap();
        let c = arr.cell(0, 0);
        assert_eq!(c.g1, -0.2);
        assert!(c.g2 < -0.2);
        assert!(arr.weight(0, 0) > 0.0);
    }

    #[test]
    fn coincidence_draw_matches_binomial_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, p) = (10u32, 0.3);
        let trials = 200_000;
        let draws: Vec<u32> = (0..trials).map(|_| coincidences(n, p, &mut rng)).collect();
        let mean = draws.iter().map(|&d| d as f64).sum::<f64>() / trials as f64;
        let var = draws
            .iter()
            .map(|&d| (d as f64 - mean).powi(2))
            .sum::<f64>()
            / trials as f64;
        let expected_var = n as f64 * p * (1.0 - p);
        assert!((mean - 3.0).abs() < 4.0 * (expected_var / trials as f64).sqrt());
        assert!((var / expected_var - 1.0).abs() < 0.02);
        assert!(draws.iter().all(|&d| d <= n));
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dev = device(0.1);
        let arr =
            CrossbarArray::initialize(3, 5, 6.0, dev.clone(), &KaimingUniform::new(5), &mut rng)
                .unwrap();
        let mut buf = Vec::new();
        arr.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 15 * 16);
        assert_eq!(&buf[0..4], b"CTFX");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        let back = CrossbarArray::read_snapshot(&buf[..], dev.clone()).unwrap();
        assert_eq!(back.cells(), arr.cells());
        assert_eq!(back.k(), 6.0);

        assert!(CrossbarArray::read_snapshot(&buf[..buf.len() - 1], dev.clone()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(CrossbarArray::read_snapshot(&bad[..], dev).is_err());
    }
}
