//! Versioned binary snapshots of the full engine state.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "ODLSNAP1" | version u32 | payload_len u64 | payload | checksum u64
//! ```
//!
//! The payload carries the header (p, batch index, cumulative n, family,
//! config), the lasso block (estimate, aggregated information, per-penalty
//! candidates, lambda history) and one block per tracked coordinate
//! (projection coefficients and accumulator scalars). The checksum is FNV-1a
//! over everything before it; restore(snapshot(e)) reproduces the engine
//! state bit for bit.

use ndarray::{Array1, Array2};

use crate::debias::{CoordAccumulator, VarianceMode};
use crate::engine::{Engine, EngineConfig, TrackedCoords};
use crate::error::{OdlError, Result};
use crate::glm::{Family, FamilyKind};
use crate::lasso::LassoState;
use crate::projection::ProjectionState;
use crate::prox::ProxConfig;

const MAGIC: &[u8; 8] = b"ODLSNAP1";
const VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(OdlError::Snapshot(format!(
                "truncated at byte {} (needed {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

fn family_code(kind: FamilyKind) -> u8 {
    match kind {
        FamilyKind::BernoulliLogit => 0,
        FamilyKind::GaussianIdentity => 1,
        FamilyKind::PoissonLog => 2,
    }
}

fn family_from_code(code: u8) -> Result<Family> {
    match code {
        0 => Ok(Family::bernoulli_logit()),
        1 => Ok(Family::gaussian_identity()),
        2 => Ok(Family::poisson_log()),
        other => Err(OdlError::Snapshot(format!("unknown family code {other}"))),
    }
}

/// Serializes the full engine state.
pub fn snapshot(engine: &Engine) -> Vec<u8> {
    let (config, lasso, coords, lambda_history) = engine.parts();
    let p = engine.dim();

    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let len_pos = w.buf.len();
    w.u64(0); // payload length, patched below
    let payload_start = w.buf.len();

    // header
    w.u64(p as u64);
    w.u64(lasso.batch_index() as u64);
    w.u64(lasso.n_total() as u64);
    w.u8(family_code(config.family.kind()));
    w.f64(config.family.dispersion());
    w.f64(config.ci_level);
    w.u8(match config.variance_mode {
        VarianceMode::AsWritten => 0,
        VarianceMode::PerObservation => 1,
    });
    w.u8(config.intercept as u8);
    w.u8(config.check_kkt as u8);
    w.f64(config.prox.learning_rate);
    w.f64(config.prox.stop_tol);
    w.f64(config.prox.step_tol);
    w.u64(config.prox.max_iter as u64);
    match &config.prox.penalty_mask {
        None => w.u8(0),
        Some(mask) => {
            w.u8(1);
            for &m in mask {
                w.u8(m as u8);
            }
        }
    }
    w.u64(config.lambda_grid.len() as u64);
    w.f64_slice(&config.lambda_grid);
    let tracked: Vec<usize> = coords.iter().map(|(r, _, _)| *r).collect();
    w.u64(tracked.len() as u64);
    for &r in &tracked {
        w.u64(r as u64);
    }

    // lasso block
    w.f64_slice(lasso.beta_hat().as_slice().expect("contiguous"));
    w.f64_slice(lasso.info_agg().as_slice().expect("contiguous"));
    w.u64(lasso.candidates().len() as u64);
    for (lambda, beta) in lasso.candidates() {
        w.f64(*lambda);
        w.f64_slice(beta.as_slice().expect("contiguous"));
    }
    w.u64(lambda_history.len() as u64);
    w.f64_slice(lambda_history);

    // per-coordinate block
    w.u64(coords.len() as u64);
    for (r, projection, accumulator) in &coords {
        w.u64(*r as u64);
        w.f64_slice(projection.gamma.as_slice().expect("contiguous"));
        w.f64(accumulator.s1);
        w.f64(accumulator.s2);
        w.f64(accumulator.v);
        w.f64(accumulator.v_obs);
        w.f64_slice(accumulator.s_row.as_slice().expect("contiguous"));
    }

    let payload_len = (w.buf.len() - payload_start) as u64;
    w.buf[len_pos..len_pos + 8].copy_from_slice(&payload_len.to_le_bytes());
    let checksum = fnv1a(&w.buf);
    w.u64(checksum);
    w.buf
}

/// Restores an engine from [`snapshot`] bytes, validating version, length,
/// and checksum.
pub fn restore(bytes: &[u8]) -> Result<Engine> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 8 {
        return Err(OdlError::Snapshot("snapshot shorter than header".into()));
    }
    let (body, checksum_bytes) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(checksum_bytes.try_into().unwrap());
    let computed = fnv1a(body);
    if stored != computed {
        return Err(OdlError::Snapshot(format!(
            "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
        )));
    }

    let mut r = Reader::new(body);
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(OdlError::Snapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(OdlError::Snapshot(format!(
            "unsupported snapshot version {version} (expected {VERSION})"
        )));
    }
    let payload_len = r.usize()?;
    if payload_len != body.len() - r.pos {
        return Err(OdlError::Snapshot(format!(
            "payload length {payload_len} does not match remaining {} bytes",
            body.len() - r.pos
        )));
    }

    let p = r.usize()?;
    let batch_index = r.usize()?;
    let n_total = r.usize()?;
    let family = family_from_code(r.u8()?)?;
    let _dispersion = r.f64()?;
    let ci_level = r.f64()?;
    let variance_mode = match r.u8()? {
        0 => VarianceMode::AsWritten,
        1 => VarianceMode::PerObservation,
        other => {
            return Err(OdlError::Snapshot(format!(
                "unknown variance mode code {other}"
            )))
        }
    };
    let intercept = r.u8()? != 0;
    let check_kkt = r.u8()? != 0;
    let learning_rate = r.f64()?;
    let stop_tol = r.f64()?;
    let step_tol = r.f64()?;
    let max_iter = r.usize()?;
    let penalty_mask = match r.u8()? {
        0 => None,
        1 => {
            let mut mask = Vec::with_capacity(p);
            for _ in 0..p {
                mask.push(r.u8()? != 0);
            }
            Some(mask)
        }
        other => {
            return Err(OdlError::Snapshot(format!(
                "unknown penalty mask flag {other}"
            )))
        }
    };
    let grid_len = r.usize()?;
    let lambda_grid = r.f64_vec(grid_len)?;
    let tracked_len = r.usize()?;
    let mut tracked = Vec::with_capacity(tracked_len);
    for _ in 0..tracked_len {
        tracked.push(r.usize()?);
    }

    let beta_hat = Array1::from_vec(r.f64_vec(p)?);
    let info_vec = r.f64_vec(p * p)?;
    let info_agg = Array2::from_shape_vec((p, p), info_vec)
        .map_err(|e| OdlError::Snapshot(format!("info matrix shape: {e}")))?;
    let cand_len = r.usize()?;
    let mut candidates = Vec::with_capacity(cand_len);
    for _ in 0..cand_len {
        let lambda = r.f64()?;
        candidates.push((lambda, Array1::from_vec(r.f64_vec(p)?)));
    }
    let hist_len = r.usize()?;
    let lambda_history = r.f64_vec(hist_len)?;

    let coord_len = r.usize()?;
    if coord_len != tracked.len() {
        return Err(OdlError::Snapshot(format!(
            "coordinate block count {coord_len} does not match tracked set {}",
            tracked.len()
        )));
    }
    let mut coords = Vec::with_capacity(coord_len);
    for &expected_r in &tracked {
        let coord = r.usize()?;
        if coord != expected_r {
            return Err(OdlError::Snapshot(format!(
                "coordinate block order mismatch: {coord} vs {expected_r}"
            )));
        }
        let gamma = Array1::from_vec(r.f64_vec(p - 1)?);
        let s1 = r.f64()?;
        let s2 = r.f64()?;
        let v = r.f64()?;
        let v_obs = r.f64()?;
        let s_row = Array1::from_vec(r.f64_vec(p)?);
        let mut accumulator = CoordAccumulator::new(coord, p);
        accumulator.s1 = s1;
        accumulator.s2 = s2;
        accumulator.v = v;
        accumulator.v_obs = v_obs;
        accumulator.s_row = s_row;
        coords.push((ProjectionState { coord, gamma }, accumulator));
    }
    if r.pos != body.len() {
        return Err(OdlError::Snapshot(format!(
            "{} trailing bytes after payload",
            body.len() - r.pos
        )));
    }

    let config = EngineConfig {
        family,
        lambda_grid,
        prox: ProxConfig {
            learning_rate,
            stop_tol,
            step_tol,
            max_iter,
            penalty_mask,
        },
        tracked: TrackedCoords::Set(tracked),
        ci_level,
        variance_mode,
        intercept,
        check_kkt,
    };
    let lasso = LassoState {
        batch_index,
        n_total,
        beta_hat,
        info_agg,
        candidates,
    };
    Engine::from_parts(config, p, lasso, coords, lambda_history)
}
