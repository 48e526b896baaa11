//! Semidiscrete stochastic heat equation ∂u = Δu + βu Ẇ on a periodic box,
//! driven by a [`BrownianField`].
//!
//! One step is the drift u += dt Δu followed by the compensated noise factor
//! u *= exp(β ΔW - β² dt / 2), ΔW the field increment of each site over the
//! step. Nonnegative data stay nonnegative and every noise factor has mean
//! one, so the environment mean of u is the discrete heat flow.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{from_fixed, BrownianField, Environment, GridCursor};
use crate::error::{invalid, Error, Result};
use crate::params::ModelParams;
use crate::partition::{estimate_z_bridge, field_seed, PartitionEstimate};
use crate::stats::{median, par_map};
use crate::walk::{hex, LatticeSite, TransitionKernel};

/// Largest step accepted by the explicit scheme.
pub const MAX_DT: f64 = 0.1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PLYSHE\0\0";

/// Periodic box {-R, ..., R}^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub d: usize,
    pub radius: usize,
}

impl BoxSpec {
    pub fn new(d: usize, radius: usize) -> Result<Self> {
        if d == 0 || d > crate::walk::MAX_DIM {
            return Err(invalid("d", "dimension out of range"));
        }
        let spec = BoxSpec { d, radius };
        if spec.side().checked_pow(d as u32).is_none_or(|n| n > 1 << 28) {
            return Err(invalid("radius", "box too large"));
        }
        Ok(spec)
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of a site, wrapped into the box.
    pub fn index(&self, z: &[i32]) -> usize {
        let side = self.side() as i64;
        let mut idx = 0usize;
        for &c in z.iter().rev() {
            let w = (c as i64 + self.radius as i64).rem_euclid(side);
            idx = idx * side as usize + w as usize;
        }
        idx
    }

    /// Representative of a flat index, with coordinates in [-R, R].
    pub fn site(&self, mut i: usize) -> LatticeSite {
        let side = self.side();
        let mut c = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            c.push((i % side) as i32 - self.radius as i32);
            i /= side;
        }
        LatticeSite::new(&c)
    }

    fn stride(&self, axis: usize) -> usize {
        self.side().pow(axis as u32)
    }
}

/// Values on a periodic box at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeFunction {
    pub spec: BoxSpec,
    pub time: f64,
    pub values: Vec<f64>,
}

impl LatticeFunction {
    pub fn constant(spec: BoxSpec, c: f64) -> Self {
        LatticeFunction { spec, time: 0.0, values: vec![c; spec.len()] }
    }

    pub fn delta(spec: BoxSpec, z: &LatticeSite) -> Self {
        let mut f = Self::constant(spec, 0.0);
        f.values[spec.index(z.coords())] = 1.0;
        f
    }

    pub fn from_fn(spec: BoxSpec, f: impl Fn(&LatticeSite) -> f64) -> Self {
        LatticeFunction { spec, time: 0.0, values: (0..spec.len()).map(|i| f(&spec.site(i))).collect() }
    }

    pub fn get(&self, z: &LatticeSite) -> f64 {
        self.values[self.spec.index(z.coords())]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Writes the values as a flat little-endian blob plus `path.json`.
    pub fn save(&self, path: &Path, meta: CheckpointMeta) -> Result<CheckpointManifest> {
        let mut blob = Vec::with_capacity(40 + 8 * self.values.len());
        blob.extend_from_slice(MAGIC);
        blob.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        blob.extend_from_slice(&(self.spec.d as u32).to_le_bytes());
        blob.extend_from_slice(&(self.spec.radius as u32).to_le_bytes());
        blob.extend_from_slice(&self.time.to_le_bytes());
        for v in &self.values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            d: self.spec.d,
            radius: self.spec.radius,
            time: self.time,
            entries: self.values.len() as u64,
            meta,
            checksum: hex(&Sha256::digest(&blob)),
        };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, &blob)?;
        fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointManifest)> {
        let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Cache(format!("checkpoint format version {}", manifest.format_version)));
        }
        let blob = fs::read(path)?;
        if hex(&Sha256::digest(&blob)) != manifest.checksum {
            return Err(Error::Cache("checkpoint checksum mismatch".into()));
        }
        let header = 8 + 4 * 3 + 8;
        if blob.len() < header || &blob[..8] != MAGIC {
            return Err(Error::Cache("not a checkpoint blob".into()));
        }
        let word = |o: usize| u32::from_le_bytes(blob[o..o + 4].try_into().unwrap()) as usize;
        let spec = BoxSpec::new(word(12), word(16))?;
        if spec.d != manifest.d || spec.radius != manifest.radius || blob.len() != header + 8 * spec.len() {
            return Err(Error::Cache("checkpoint header disagrees with manifest".into()));
        }
        let time = f64::from_le_bytes(blob[20..28].try_into().unwrap());
        let values = blob[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((LatticeFunction { spec, time, values }, manifest))
    }
}

fn manifest_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Run settings recorded next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub field_seed: u64,
    pub beta: f64,
    pub dt: f64,
    pub laplacian: Laplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub d: usize,
    pub radius: usize,
    pub time: f64,
    pub entries: u64,
    pub meta: CheckpointMeta,
    pub checksum: String,
}

/// Normalization of the lattice Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laplacian {
    /// (1/2d) Σ_e (f(y+e) - f(y)): generator of the rate-1 walk.
    #[default]
    Walk,
    /// Σ_e (f(y+e) - f(y)): generator of the rate-2d walk.
    Graph,
}

impl Laplacian {
    fn prefactor(self, d: usize) -> f64 {
        match self {
            Laplacian::Walk => 1.0 / (2 * d) as f64,
            Laplacian::Graph => 1.0,
        }
    }
}

/// Per-step field increments of every box site. Dyadic steps starting on
/// the grid are read cell by cell through [`GridCursor`]; anything else falls
/// back to point queries.
enum Noise<'a> {
    Off,
    Grid { cursors: Vec<GridCursor>, m: usize, pos: usize, buf: Vec<i64> },
    Point { field: &'a BrownianField, sites: Vec<LatticeSite> },
}

fn dyadic_level(dt: f64) -> Option<u32> {
    let l = -dt.log2();
    (l >= 0.0 && l.fract() == 0.0 && l <= 24.0).then_some(l as u32)
}

impl<'a> Noise<'a> {
    fn new(field: &'a BrownianField, spec: BoxSpec, t0: f64, dt: f64) -> Self {
        let sites: Vec<LatticeSite> = (0..spec.len()).map(|i| spec.site(i)).collect();
        if let Some(level) = dyadic_level(dt) {
            let m = 1usize << level;
            let k = t0.floor();
            let pos = (t0 - k) * m as f64;
            if pos.fract() == 0.0 {
                let mut cursors: Vec<GridCursor> =
                    sites.iter().map(|z| GridCursor::new(field, z.coords(), k as i64, level)).collect();
                let mut buf = vec![0; spec.len() * (m + 1)];
                fill(&mut cursors, &mut buf, m);
                return Noise::Grid { cursors, m, pos: pos as usize, buf };
            }
        }
        Noise::Point { field, sites }
    }

    fn increments(&mut self, tau: f64, dt: f64, out: &mut [f64]) {
        match self {
            Noise::Off => out.fill(0.0),
            Noise::Grid { cursors, m, pos, buf } => {
                if *pos == *m {
                    fill(cursors, buf, *m);
                    *pos = 0;
                }
                let w = *m + 1;
                for (s, o) in out.iter_mut().enumerate() {
                    *o = from_fixed(buf[s * w + *pos + 1] - buf[s * w + *pos]);
                }
                *pos += 1;
            }
            Noise::Point { field, sites } => {
                for (o, z) in out.iter_mut().zip(sites.iter()) {
                    *o = field.increment(z.coords(), tau, tau + dt);
                }
            }
        }
    }
}

fn fill(cursors: &mut [GridCursor], buf: &mut [i64], m: usize) {
    use rayon::prelude::*;
    cursors.par_iter_mut().zip(buf.par_chunks_mut(m + 1)).for_each(|(c, b)| c.next_cell(b));
}

/// Several solutions of the same equation advanced together against one
/// noise realization.
pub struct Evolution<'a> {
    spec: BoxSpec,
    beta: f64,
    dt: f64,
    pref: f64,
    t0: f64,
    steps: usize,
    noise: Noise<'a>,
    dw: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Evolution<'a> {
    pub fn new(
        field: &'a BrownianField,
        beta: f64,
        spec: BoxSpec,
        t0: f64,
        dt: f64,
        laplacian: Laplacian,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if field.dim() != spec.d {
            return Err(invalid("d", "field and box dimensions differ"));
        }
        let pref = laplacian.prefactor(spec.d);
        if dt * pref * (2 * spec.d) as f64 > 1.0 {
            return Err(invalid("dt", "explicit step would lose positivity"));
        }
        let noise = if beta == 0.0 { Noise::Off } else { Noise::new(field, spec, t0, dt) };
        Ok(Evolution {
            spec,
            beta,
            dt,
            pref,
            t0,
            steps: 0,
            noise,
            dw: vec![0.0; spec.len()],
            scratch: vec![0.0; spec.len()],
        })
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One step for each state in `states`.
    pub fn step(&mut self, states: &mut [&mut [f64]]) -> Result<()> {
        let tau = self.time();
        self.noise.increments(tau, self.dt, &mut self.dw);
        let b = self.beta;
        let comp = -0.5 * b * b * self.dt;
        for u in self.dw.iter_mut() {
            *u = (b * *u + comp).exp();
        }
        for u in states.iter_mut() {
            drift(self.spec, self.dt * self.pref, u, &mut self.scratch);
            let mut finite = true;
            for ((v, s), f) in u.iter_mut().zip(self.scratch.iter()).zip(self.dw.iter()) {
                *v = s * f;
                finite &= v.is_finite();
            }
            if !finite {
                return Err(Error::Unstable { step: self.steps });
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// out = u + c Σ_e (u(y+e) - u(y)) with periodic wrap.
fn drift(spec: BoxSpec, c: f64, u: &[f64], out: &mut [f64]) {
    let side = spec.side();
    let n = u.len();
    let center = 1.0 - c * (2 * spec.d) as f64;
    for (i, o) in out.iter_mut().enumerate() {
        *o = center * u[i];
    }
    for row in out.chunks_exact_mut(side).zip(u.chunks_exact(side)) {
        let (o, r) = row;
        if side == 1 {
            o[0] += 2.0 * c * r[0];
            continue;
        }
        o[0] += c * (r[1] + r[side - 1]);
        for k in 1..side - 1 {
            o[k] += c * (r[k - 1] + r[k + 1]);
        }
        o[side - 1] += c * (r[side - 2] + r[0]);
    }
    for axis in 1..spec.d {
        let stride = spec.stride(axis);
        let block = stride * side;
        for base in (0..n).step_by(block) {
            for k in 0..side {
                let up = if k + 1 == side { 0 } else { k + 1 };
                let down = if k == 0 { side - 1 } else { k - 1 };
                let (row, ru, rd) = (base + k * stride, base + up * stride, base + down * stride);
                let o = &mut out[row..row + stride];
                let (a, b) = (&u[ru..ru + stride], &u[rd..rd + stride]);
                for j in 0..stride {
                    o[j] += c * (a[j] + b[j]);
                }
            }
        }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(invalid("dt", "need 0 < dt <= 0.1"));
    }
    Ok(())
}

/// Snaps `t` to the step grid of `dt`.
fn steps_to(t: f64, dt: f64) -> Result<usize> {
    let n = (t / dt).round();
    if (n * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(invalid("t_end", "must be a multiple of dt"));
    }
    Ok(n as usize)
}

/// Integrates `f0` from its time to `t_end`.
pub fn integrate(
    field: &BrownianField,
    params: &ModelParams,
    f0: &LatticeFunction,
    t_end: f64,
    dt: f64,
    laplacian: Laplacian,
) -> Result<LatticeFunction> {
    check_dt(dt)?;
    if f0.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("f0", "initial data must be finite"));
    }
    let n = steps_to(t_end - f0.time, dt)?;
    let mut ev = Evolution::new(field, params.beta, f0.spec, f0.time, dt, laplacian)?;
    let mut u = f0.values.clone();
    for _ in 0..n {
        ev.step(&mut [&mut u])?;
    }
    Ok(LatticeFunction { spec: f0.spec, time: t_end, values: u })
}

/// Free-space kernel folded onto the periodic box.
pub fn periodic_kernel(kernel: &TransitionKernel, spec: BoxSpec, t: f64, eps: f64) -> Result<LatticeFunction> {
    let table = kernel.p_continuous_table(t, eps)?;
    let r = kernel.radius() as i32;
    let mut f = LatticeFunction::constant(spec, 0.0);
    f.time = t;
    for z in crate::walk::ball_sites(&LatticeSite::origin(spec.d), r as usize) {
        f.values[spec.index(z.coords())] += table.get(z.coords()).unwrap_or(0.0);
    }
    Ok(f)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkReport {
    pub y: Vec<i32>,
    pub t: f64,
    pub dt: f64,
    pub lattice: f64,
    pub bridge: PartitionEstimate,
    pub rel_diff: f64,
    /// Three Monte Carlo standard errors, relative to the lattice value.
    pub mc_budget: f64,
}

/// Lattice solution from δ_0 at (y, t) against the bridge estimate of
/// Z_{0,0}^{y,t} on the same field.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_crosscheck<R: Rng + ?Sized>(
    field: &BrownianField,
    params: &ModelParams,
    kernel: &TransitionKernel,
    y: &LatticeSite,
    t: f64,
    dt: f64,
    box_radius: usize,
    n_paths: usize,
    rng: &mut R,
) -> Result<FkReport> {
    let spec = BoxSpec::new(params.d, box_radius)?;
    let o = LatticeSite::origin(params.d);
    let u = integrate(field, params, &LatticeFunction::delta(spec, &o), t, dt, Laplacian::Walk)?;
    let lattice = u.get(y);
    let bridge = estimate_z_bridge(field, params, kernel, &o, 0.0, y, t, n_paths, rng)?;
    Ok(FkReport {
        y: y.coords().to_vec(),
        t,
        dt,
        lattice,
        bridge,
        rel_diff: (bridge.mean - lattice).abs() / lattice,
        mc_budget: 3.0 * bridge.stderr / lattice,
    })
}

/// One bridge estimate against the lattice solution at several time steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkSweep {
    pub y: Vec<i32>,
    pub t: f64,
    pub bridge: PartitionEstimate,
    pub rows: Vec<FkRow>,
    /// rel_diff(dt_k) / rel_diff(dt_{k+1}) for consecutive steps.
    pub shrink: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FkRow {
    pub dt: f64,
    pub lattice: f64,
    pub rel_diff: f64,
    pub mc_budget: f64,
}

/// [`feynman_kac_crosscheck`] over a list of time steps, sharing one bridge
/// estimate so that the dt dependence is not masked by fresh sampling noise.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_dt_sweep<R: Rng + ?Sized>(
    field: &BrownianField,
    params: &ModelParams,
    kernel: &TransitionKernel,
    y: &LatticeSite,
    t: f64,
    dts: &[f64],
    box_radius: usize,
    n_paths: usize,
    rng: &mut R,
) -> Result<FkSweep> {
    if dts.is_empty() {
        return Err(invalid("dt", "need at least one time step"));
    }
    let spec = BoxSpec::new(params.d, box_radius)?;
    let o = LatticeSite::origin(params.d);
    let bridge = estimate_z_bridge(field, params, kernel, &o, 0.0, y, t, n_paths, rng)?;
    let mut rows = Vec::with_capacity(dts.len());
    for &dt in dts {
        let u = integrate(field, params, &LatticeFunction::delta(spec, &o), t, dt, Laplacian::Walk)?;
        let lattice = u.get(y);
        rows.push(FkRow {
            dt,
            lattice,
            rel_diff: (bridge.mean - lattice).abs() / lattice,
            mc_budget: 3.0 * bridge.stderr / lattice,
        });
    }
    let shrink = rows.windows(2).map(|w| w[0].rel_diff / w[1].rel_diff).collect();
    Ok(FkSweep { y: y.coords().to_vec(), t, bridge, rows, shrink })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioTable {
    pub checkpoints: Vec<f64>,
    /// Median over environments of max_y |u1(y)/u1(0) - u2(y)/u2(0)|.
    pub median_gap: Vec<f64>,
    pub decreasing: bool,
    pub n_env: usize,
}

/// Largest gap between the normalized profiles of two solutions on `y_set`.
fn ratio_gap(spec: BoxSpec, u1: &[f64], u2: &[f64], y_set: &[LatticeSite]) -> f64 {
    let i0 = spec.index(&vec![0; spec.d]);
    y_set
        .iter()
        .map(|y| {
            let i = spec.index(y.coords());
            (u1[i] / u1[i0] - u2[i] / u2[i0]).abs()
        })
        .fold(0.0, f64::max)
}

/// Rescales by the power of two nearest 1/u(0), which leaves every ratio
/// bit-identical.
fn renormalize(u: &mut [f64], i0: usize) {
    let e = u[i0].log2().round();
    if e.is_finite() && e != 0.0 {
        let f = (2.0f64).powi(-(e as i32));
        u.iter_mut().for_each(|v| *v *= f);
    }
}

/// Integrates f1 and f2 against the same noise in each environment and
/// tracks the ratio gap at the checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn ratio_compare(
    params: &ModelParams,
    f1: &LatticeFunction,
    f2: &LatticeFunction,
    y_set: &[LatticeSite],
    checkpoints: &[f64],
    dt: f64,
    n_env: usize,
    seed: u64,
) -> Result<RatioTable> {
    if f1.spec != f2.spec || f1.time != 0.0 || f2.time != 0.0 {
        return Err(invalid("f1", "initial data must share a box and start at time 0"));
    }
    if f1.values.iter().chain(f2.values.iter()).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("f1", "initial data must be strictly positive"));
    }
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("checkpoints", "need increasing times"));
    }
    check_dt(dt)?;
    let spec = f1.spec;
    let marks: Vec<usize> = checkpoints.iter().map(|&t| steps_to(t, dt)).collect::<Result<_>>()?;
    let i0 = spec.index(&vec![0; spec.d]);
    let gaps: Vec<Result<Vec<f64>>> = par_map(n_env, |e| {
        let field = BrownianField::new(field_seed(seed, e), spec.d);
        let mut ev = Evolution::new(&field, params.beta, spec, 0.0, dt, Laplacian::Walk)?;
        let (mut u1, mut u2) = (f1.values.clone(), f2.values.clone());
        let mut out = Vec::with_capacity(marks.len());
        for &m in &marks {
            while ev.steps() < m {
                ev.step(&mut [&mut u1, &mut u2])?;
            }
            renormalize(&mut u1, i0);
            renormalize(&mut u2, i0);
            out.push(ratio_gap(spec, &u1, &u2, y_set));
        }
        Ok(out)
    });
    let gaps: Vec<Vec<f64>> = gaps.into_iter().collect::<Result<_>>()?;
    let median_gap: Vec<f64> =
        (0..marks.len()).map(|k| median(&gaps.iter().map(|g| g[k]).collect::<Vec<_>>())).collect();
    Ok(RatioTable {
        checkpoints: checkpoints.to_vec(),
        decreasing: median_gap.windows(2).all(|w| w[1] < w[0]),
        median_gap,
        n_env,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_indexing_wraps() {
        let spec = BoxSpec::new(3, 2).unwrap();
        assert_eq!(spec.len(), 125);
        for i in 0..spec.len() {
            assert_eq!(spec.index(spec.site(i).coords()), i);
        }
        assert_eq!(spec.index(&[3, 0, 0]), spec.index(&[-2, 0, 0]));
    }

    #[test]
    fn drift_matches_naive_stencil() {
        let spec = BoxSpec::new(2, 3).unwrap();
        let u: Vec<f64> = (0..spec.len()).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let mut out = vec![0.0; u.len()];
        drift(spec, 0.05, &u, &mut out);
        for i in 0..spec.len() {
            let z = spec.site(i);
            let mut s = 0.0;
            for a in 0..2 {
                for sg in [-1, 1] {
                    let mut c = z.coords().to_vec();
                    c[a] += sg;
                    s += u[spec.index(&c)] - u[i];
                }
            }
            assert!((out[i] - (u[i] + 0.05 * s)).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_is_harmonic_at_zero_beta() {
        let f = BrownianField::new(1, 3);
        let p = ModelParams::new(3, 0.0);
        let spec = BoxSpec::new(3, 3).unwrap();
        let u = integrate(&f, &p, &LatticeFunction::constant(spec, 1.0), 1.0, 0.0625, Laplacian::Walk).unwrap();
        assert!(u.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn grid_and_point_noise_agree() {
        let f = BrownianField::new(5, 2);
        let p = ModelParams::new(2, 0.4);
        let spec = BoxSpec::new(2, 3).unwrap();
        let f0 = LatticeFunction::delta(spec, &LatticeSite::origin(2));
        let a = integrate(&f, &p, &f0, 1.5, 0.0625, Laplacian::Walk).unwrap();
        // 0.0625 = 5/80 steps with a shifted start use point queries
        let mut g = f0.clone();
        g.time = 0.5;
        let mut ev = Evolution::new(&f, 0.4, spec, 0.5, 0.0625, Laplacian::Walk).unwrap();
        let mut noise_pt = Noise::Point { field: &f, sites: (0..spec.len()).map(|i| spec.site(i)).collect() };
        let mut x = vec![0.0; spec.len()];
        let mut y = vec![0.0; spec.len()];
        for k in 0..16 {
            ev.noise.increments(0.5 + k as f64 * 0.0625, 0.0625, &mut x);
            noise_pt.increments(0.5 + k as f64 * 0.0625, 0.0625, &mut y);
            assert_eq!(x, y);
        }
        assert!(a.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn renormalization_keeps_ratios_bitwise() {
        let f = BrownianField::new(9, 3);
        let p = ModelParams::new(3, 0.3);
        let spec = BoxSpec::new(3, 4).unwrap();
        let f0 = LatticeFunction::from_fn(spec, |z| 1.0 + 0.1 * z.norm1() as f64);
        let i0 = spec.index(&[0, 0, 0]);
        let mut ev1 = Evolution::new(&f, p.beta, spec, 0.0, 0.0625, Laplacian::Walk).unwrap();
        let mut ev2 = Evolution::new(&f, p.beta, spec, 0.0, 0.0625, Laplacian::Walk).unwrap();
        let (mut a, mut b) = (f0.values.clone(), f0.values.clone());
        b.iter_mut().for_each(|v| *v *= 8.0);
        for k in 0..40 {
            ev1.step(&mut [&mut a]).unwrap();
            ev2.step(&mut [&mut b]).unwrap();
            if k % 10 == 0 {
                renormalize(&mut b, i0);
            }
        }
        for i in 0..spec.len() {
            assert_eq!((a[i] / a[i0]).to_bits(), (b[i] / b[i0]).to_bits());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("she-ckpt-{}", std::process::id()));
        let spec = BoxSpec::new(2, 2).unwrap();
        let mut f = LatticeFunction::from_fn(spec, |z| z.norm2());
        f.time = 1.25;
        let meta = CheckpointMeta { field_seed: 3, beta: 0.2, dt: 0.01, laplacian: Laplacian::Graph };
        let path = dir.join("u.bin");
        f.save(&path, meta.clone()).unwrap();
        let (g, m) = LatticeFunction::load(&path).unwrap();
        assert_eq!(f, g);
        assert_eq!(m.meta, meta);
        let mut blob = fs::read(&path).unwrap();
        blob[30] ^= 1;
        fs::write(&path, blob).unwrap();
        assert!(LatticeFunction::load(&path).is_err());
        fs::remove_dir_all(dir).ok();
    }
}
