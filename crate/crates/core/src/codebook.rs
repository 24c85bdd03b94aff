//! Angular grids, frequency-dependent array responses and sensing dictionaries.
//!
//! Grid indices are 0-based everywhere. Within one array the column of
//! `(i_h, i_v)` is `i_h·G_v + i_v`; the joint dictionary column of
//! `(i_r, i_t)` is `i_t·G_r + i_r`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::numerics::{kron, kron_vec, unvectorize, vectorize, CMatrix, CVector, NumericsError, C64};
use crate::training::PilotBeams;

/// Planar array with `vertical × horizontal` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpaSize {
    pub vertical: usize,
    pub horizontal: usize,
}

impl UpaSize {
    pub fn new(vertical: usize, horizontal: usize) -> Self {
        Self { vertical, horizontal }
    }

    pub fn total(&self) -> usize {
        self.vertical * self.horizontal
    }
}

/// Spatial angles of one path (or grid point): AOD then AOA, horizontal first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleTuple {
    pub tx_h: f64,
    pub tx_v: f64,
    pub rx_h: f64,
    pub rx_v: f64,
}

impl AngleTuple {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx_h, self.tx_v, self.rx_h, self.rx_v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { tx_h: a[0], tx_v: a[1], rx_h: a[2], rx_v: a[3] }
    }
}

/// a_N(ψ;Δ) with entries e^{−j2πn(1+Δ/f_c)ψ}/√N.
pub fn steering_vector(n: usize, psi: f64, delta: f64, fc: f64) -> CVector {
    let scale = 1.0 / (n as f64).sqrt();
    let phase = -2.0 * PI * (1.0 + delta / fc) * psi;
    CVector::from_fn(n, |i, _| C64::from_polar(scale, phase * i as f64))
}

/// b = a_{N_h}(ψ_h) ⊗ a_{N_v}(ψ_v).
pub fn upa_vector(size: UpaSize, psi_h: f64, psi_v: f64, delta: f64, fc: f64) -> CVector {
    kron_vec(
        &steering_vector(size.horizontal, psi_h, delta, fc),
        &steering_vector(size.vertical, psi_v, delta, fc),
    )
}

/// ψ_i = (i − (G+1)/2)/G for i = 1..G.
pub fn uniform_grid(g: usize) -> Vec<f64> {
    (0..g).map(|i| grid_angle(i, g)).collect()
}

/// Angle of 0-based index `i` on the uniform grid of size `g`.
pub fn grid_angle(i: usize, g: usize) -> f64 {
    (i as f64 - (g as f64 - 1.0) / 2.0) / g as f64
}

/// Nearest 0-based index on the uniform grid of size `g`.
pub fn nearest_grid_index(psi: f64, g: usize) -> usize {
    let x = wrap_angle(psi) * g as f64 + (g as f64 - 1.0) / 2.0;
    ((x + 0.5).floor().max(0.0) as usize).min(g - 1)
}

/// Wraps a spatial angle into [−0.5, 0.5).
pub fn wrap_angle(psi: f64) -> f64 {
    let w = psi - (psi + 0.5).floor();
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

/// Level-`m` codewords around the previous pick: ψ̂ + (i − (G_sub+1)/2)/G_sub^m.
pub fn hierarchical_subcodebook(level: usize, parent: f64, g_sub: usize) -> Vec<f64> {
    assert!(level >= 1, "levels start at 1");
    let step = (g_sub as f64).powi(level as i32);
    (0..g_sub)
        .map(|i| wrap_angle(parent + (i as f64 - (g_sub as f64 - 1.0) / 2.0) / step))
        .collect()
}

/// Hierarchical grid: `levels` levels of `sub_*` codewords per dimension, so the
/// finest grid has `sub^levels` points per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub sub_rx: usize,
    pub sub_tx: usize,
    pub levels: usize,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid sizes and level count must be at least 1")]
    Empty,
    #[error("{side} sub-codebook size {sub} is smaller than the array dimension {antennas}")]
    Coverage { side: &'static str, sub: usize, antennas: usize },
}

impl GridSpec {
    pub fn new(sub_rx: usize, sub_tx: usize, levels: usize) -> Self {
        Self { sub_rx, sub_tx, levels }
    }

    /// Checks the beam-coverage rule against the arrays.
    pub fn validate(&self, rx: UpaSize, tx: UpaSize) -> Result<(), GridError> {
        if self.sub_rx == 0 || self.sub_tx == 0 || self.levels == 0 {
            return Err(GridError::Empty);
        }
        let need_rx = rx.vertical.max(rx.horizontal);
        if self.sub_rx < need_rx {
            return Err(GridError::Coverage { side: "receive", sub: self.sub_rx, antennas: need_rx });
        }
        let need_tx = tx.vertical.max(tx.horizontal);
        if self.sub_tx < need_tx {
            return Err(GridError::Coverage { side: "transmit", sub: self.sub_tx, antennas: need_tx });
        }
        Ok(())
    }

    /// Per-dimension sizes `[tx_h, tx_v, rx_h, rx_v]` at `level`.
    pub fn dims(&self, level: usize) -> [usize; 4] {
        let t = self.sub_tx.pow(level as u32);
        let r = self.sub_rx.pow(level as u32);
        [t, t, r, r]
    }

    /// Sub-codebook size of each dimension.
    pub fn subs(&self) -> [usize; 4] {
        [self.sub_tx, self.sub_tx, self.sub_rx, self.sub_rx]
    }

    pub fn rx_size(&self, level: usize) -> usize {
        self.sub_rx.pow(2 * level as u32)
    }

    pub fn tx_size(&self, level: usize) -> usize {
        self.sub_tx.pow(2 * level as u32)
    }

    /// Number of joint dictionary columns at `level`.
    pub fn columns(&self, level: usize) -> usize {
        self.rx_size(level) * self.tx_size(level)
    }
}

/// One point of the 4-D angle grid at some level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub tx_h: usize,
    pub tx_v: usize,
    pub rx_h: usize,
    pub rx_v: usize,
}

impl GridIndex {
    pub fn as_array(&self) -> [usize; 4] {
        [self.tx_h, self.tx_v, self.rx_h, self.rx_v]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        Self { tx_h: a[0], tx_v: a[1], rx_h: a[2], rx_v: a[3] }
    }

    /// `(i_r, i_t)` array-column pair.
    pub fn pair(&self, grid: &GridSpec, level: usize) -> (usize, usize) {
        let d = grid.dims(level);
        (self.rx_h * d[3] + self.rx_v, self.tx_h * d[1] + self.tx_v)
    }

    /// Joint dictionary column `i_t·G_r + i_r`.
    pub fn flat(&self, grid: &GridSpec, level: usize) -> usize {
        let (ir, it) = self.pair(grid, level);
        it * grid.rx_size(level) + ir
    }

    pub fn from_flat(j: usize, grid: &GridSpec, level: usize) -> Self {
        let d = grid.dims(level);
        let gr = grid.rx_size(level);
        let (it, ir) = (j / gr, j % gr);
        Self { tx_h: it / d[1], tx_v: it % d[1], rx_h: ir / d[3], rx_v: ir % d[3] }
    }

    pub fn angles(&self, grid: &GridSpec, level: usize) -> AngleTuple {
        let d = grid.dims(level);
        let i = self.as_array();
        AngleTuple::from_array([
            grid_angle(i[0], d[0]),
            grid_angle(i[1], d[1]),
            grid_angle(i[2], d[2]),
            grid_angle(i[3], d[3]),
        ])
    }

    pub fn nearest(angles: &AngleTuple, grid: &GridSpec, level: usize) -> Self {
        let d = grid.dims(level);
        let a = angles.as_array();
        Self::from_array([
            nearest_grid_index(a[0], d[0]),
            nearest_grid_index(a[1], d[1]),
            nearest_grid_index(a[2], d[2]),
            nearest_grid_index(a[3], d[3]),
        ])
    }

    /// Cell one level up that contains this point.
    pub fn parent(&self, grid: &GridSpec) -> Self {
        let s = grid.subs();
        let i = self.as_array();
        Self::from_array([i[0] / s[0], i[1] / s[1], i[2] / s[2], i[3] / s[3]])
    }

    /// Ancestor at `target` level of a point at `level`.
    pub fn ancestor(&self, grid: &GridSpec, level: usize, target: usize) -> Self {
        (target..level).fold(*self, |g, _| g.parent(grid))
    }
}

/// Array response matrix over the level-`level` grid: columns are UPA vectors.
pub fn array_response(size: UpaSize, g_h: usize, g_v: usize, delta: f64, fc: f64) -> CMatrix {
    let mut h = CMatrix::zeros(size.horizontal, g_h);
    for (i, psi) in uniform_grid(g_h).into_iter().enumerate() {
        h.set_column(i, &steering_vector(size.horizontal, psi, delta, fc));
    }
    let mut v = CMatrix::zeros(size.vertical, g_v);
    for (i, psi) in uniform_grid(g_v).into_iter().enumerate() {
        v.set_column(i, &steering_vector(size.vertical, psi, delta, fc));
    }
    kron(&h, &v).expect("array response sizes are modest")
}

/// Sensing dictionary of one pilot subcarrier in factored form:
/// Θ = T ⊗ P with P = WᴴA_R and T = Xᵀ·conj(A_T).
#[derive(Debug, Clone)]
pub struct PilotDictionary {
    pub subcarrier: usize,
    pub delta: f64,
    pub array_rx: CMatrix,
    pub array_tx: CMatrix,
    pub rx_proj: CMatrix,
    pub tx_proj: CMatrix,
}

impl PilotDictionary {
    pub fn rows(&self) -> usize {
        self.rx_proj.nrows() * self.tx_proj.nrows()
    }

    pub fn cols(&self) -> usize {
        self.rx_proj.ncols() * self.tx_proj.ncols()
    }

    pub fn column(&self, j: usize) -> CVector {
        let gr = self.rx_proj.ncols();
        kron_vec(&self.tx_proj.column(j / gr).into_owned(), &self.rx_proj.column(j % gr).into_owned())
    }

    pub fn columns(&self, js: &[usize]) -> CMatrix {
        let mut m = CMatrix::zeros(self.rows(), js.len());
        for (c, &j) in js.iter().enumerate() {
            m.set_column(c, &self.column(j));
        }
        m
    }

    /// Θᴴr, computed as vec(Pᴴ R conj(T)).
    pub fn correlate(&self, r: &CVector) -> CVector {
        let rm = unvectorize(r, self.rx_proj.nrows(), self.tx_proj.nrows()).expect("residual length");
        vectorize(&(self.rx_proj.ad_mul(&rm) * self.tx_proj.conjugate()))
    }

    /// Θz, computed as vec(P Z Tᵀ).
    pub fn apply(&self, z: &CVector) -> CVector {
        let zm = unvectorize(z, self.rx_proj.ncols(), self.tx_proj.ncols()).expect("coefficient length");
        vectorize(&(&self.rx_proj * zm * self.tx_proj.transpose()))
    }

    /// Dense Θ; only sensible for small grids.
    pub fn theta(&self) -> Result<CMatrix, NumericsError> {
        kron(&self.tx_proj, &self.rx_proj)
    }
}

/// Per-pilot dictionaries at one grid level.
#[derive(Debug, Clone)]
pub struct DictionarySet {
    pub level: usize,
    pub grid: GridSpec,
    pub pilots: Vec<PilotDictionary>,
}

impl DictionarySet {
    pub fn columns(&self) -> usize {
        self.grid.columns(self.level)
    }

    pub fn pilot_subcarriers(&self) -> Vec<usize> {
        self.pilots.iter().map(|p| p.subcarrier).collect()
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DictionaryError {
    #[error("beams for subcarrier {subcarrier}: {what} has shape {got:?}, expected {expected:?}")]
    Shape { subcarrier: usize, what: &'static str, got: (usize, usize), expected: (usize, usize) },
}

/// Builds Θ_k for every pilot at grid `level`.
pub fn build_dictionaries(
    sys: &crate::channel::SystemConfig,
    grid: &GridSpec,
    level: usize,
    beams: &[PilotBeams],
) -> Result<DictionarySet, DictionaryError> {
    let d = grid.dims(level);
    let mut pilots = Vec::with_capacity(beams.len());
    for b in beams {
        let nr = sys.rx.total();
        let nt = sys.tx.total();
        if b.combiner.nrows() != nr {
            return Err(DictionaryError::Shape {
                subcarrier: b.subcarrier,
                what: "combiner",
                got: b.combiner.shape(),
                expected: (nr, b.combiner.ncols()),
            });
        }
        if b.pilot.nrows() != nt {
            return Err(DictionaryError::Shape {
                subcarrier: b.subcarrier,
                what: "pilot",
                got: b.pilot.shape(),
                expected: (nt, b.pilot.ncols()),
            });
        }
        let delta = sys.subcarrier_offset(b.subcarrier);
        let array_rx = array_response(sys.rx, d[2], d[3], delta, sys.carrier_hz);
        let array_tx = array_response(sys.tx, d[0], d[1], delta, sys.carrier_hz);
        let rx_proj = b.combiner.ad_mul(&array_rx);
        let tx_proj = b.pilot.transpose() * array_tx.conjugate();
        pilots.push(PilotDictionary { subcarrier: b.subcarrier, delta, array_rx, array_tx, rx_proj, tx_proj });
    }
    Ok(DictionarySet { level, grid: *grid, pilots })
}

/// p(ψ, ψ_i; Δ) = (Wᴴa_N(ψ;Δ))ᴴ Wᴴa_N(ψ_i;Δ).
pub fn beam_pattern(w: &CMatrix, psi: f64, psi_i: f64, delta: f64, fc: f64) -> C64 {
    let n = w.nrows();
    let a = w.ad_mul(&steering_vector(n, psi, delta, fc));
    let b = w.ad_mul(&steering_vector(n, psi_i, delta, fc));
    a.dotc(&b)
}

/// Equivalent dictionary vector u_k = (Xᵀ conj(b_t)) ⊗ (Wᴴ b_r) for arbitrary angles.
pub fn equivalent_vector(
    sys: &crate::channel::SystemConfig,
    beams: &PilotBeams,
    angles: &AngleTuple,
    delta: f64,
) -> CVector {
    let br = upa_vector(sys.rx, angles.rx_h, angles.rx_v, delta, sys.carrier_hz);
    let bt = upa_vector(sys.tx, angles.tx_h, angles.tx_v, delta, sys.carrier_hz);
    let p = beams.combiner.ad_mul(&br);
    let t = beams.pilot.transpose() * bt.conjugate();
    kron_vec(&t, &p)
}
