//! Bidirectional gated recurrent sorter: reads a normalized scalar sequence
//! in both directions and emits one predicted normalized rank per position.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug)]
pub struct SorterConfig {
    pub seq_len: usize,
    pub hidden: usize,
}

impl SorterConfig {
    pub fn new(seq_len: usize) -> Self {
        SorterConfig { seq_len, hidden: DEFAULT_HIDDEN }
    }
}

/// Sidecar metadata persisted next to the parameter dump.
#[derive(Clone, Debug)]
pub struct SorterMeta {
    pub seq_len: usize,
    pub hidden: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batches: usize,
    pub heldout_spearman: f64,
}

struct GruDirection {
    w_xz: ParamId,
    w_hz: ParamId,
    b_z: ParamId,
    w_xr: ParamId,
    w_hr: ParamId,
    b_r: ParamId,
    w_xn: ParamId,
    w_hn: ParamId,
    b_xn: ParamId,
    b_hn: ParamId,
}

pub struct Sorter {
    config: SorterConfig,
    pub store: ParamStore,
    fwd: GruDirection,
    bwd: GruDirection,
    head_w: ParamId,
    head_b: ParamId,
}

fn direction(store: &mut ParamStore, prefix: &str, h: usize, rng: &mut SeededRng) -> Result<GruDirection> {
    // All recurrent weights and biases use the hidden size as fan-in.
    let mut add = |name: &str, shape: Vec<usize>, rng: &mut SeededRng| {
        store.add_uniform(format!("{prefix}.{name}"), shape, h, rng)
    };
    Ok(GruDirection {
        w_xz: add("w_xz", vec![1, h], rng)?,
        w_hz: add("w_hz", vec![h, h], rng)?,
        b_z: add("b_z", vec![1, h], rng)?,
        w_xr: add("w_xr", vec![1, h], rng)?,
        w_hr: add("w_hr", vec![h, h], rng)?,
        b_r: add("b_r", vec![1, h], rng)?,
        w_xn: add("w_xn", vec![1, h], rng)?,
        w_hn: add("w_hn", vec![h, h], rng)?,
        b_xn: add("b_xn", vec![1, h], rng)?,
        b_hn: add("b_hn", vec![1, h], rng)?,
    })
}

impl Sorter {
    pub fn new(config: SorterConfig, seed: u64) -> Result<Self> {
        if config.seq_len < 2 || config.hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "sorter needs seq_len >= 2 and positive hidden size, got {config:?}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        let fwd = direction(&mut store, "fwd", config.hidden, &mut rng)?;
        let bwd = direction(&mut store, "bwd", config.hidden, &mut rng)?;
        let head_w = store.add_uniform("head.w", vec![2 * config.hidden, 1], 2 * config.hidden, &mut rng)?;
        let head_b = store.add_uniform("head.b", vec![1, 1], 2 * config.hidden, &mut rng)?;
        Ok(Sorter { config, store, fwd, bwd, head_w, head_b })
    }

    pub fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn cell(
        &self,
        tape: &mut Tape,
        dir: &GruDirection,
        x_t: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let s = &self.store;
        let w_xz = tape.param(s, dir.w_xz);
        let w_hz = tape.param(s, dir.w_hz);
        let b_z = tape.param(s, dir.b_z);
        let xz = tape.matmul(x_t, w_xz)?;
        let hz = tape.matmul(h_prev, w_hz)?;
        let z_lin = tape.add(xz, hz)?;
        let z_lin = tape.add_bias(z_lin, b_z)?;
        let z = tape.sigmoid(z_lin);

        let w_xr = tape.param(s, dir.w_xr);
        let w_hr = tape.param(s, dir.w_hr);
        let b_r = tape.param(s, dir.b_r);
        let xr = tape.matmul(x_t, w_xr)?;
        let hr = tape.matmul(h_prev, w_hr)?;
        let r_lin = tape.add(xr, hr)?;
        let r_lin = tape.add_bias(r_lin, b_r)?;
        let r = tape.sigmoid(r_lin);

        let w_xn = tape.param(s, dir.w_xn);
        let w_hn = tape.param(s, dir.w_hn);
        let b_xn = tape.param(s, dir.b_xn);
        let b_hn = tape.param(s, dir.b_hn);
        let xn = tape.matmul(x_t, w_xn)?;
        let xn = tape.add_bias(xn, b_xn)?;
        let hn = tape.matmul(h_prev, w_hn)?;
        let hn = tape.add_bias(hn, b_hn)?;
        let gated = tape.mul(r, hn)?;
        let n_lin = tape.add(xn, gated)?;
        let n = tape.tanh(n_lin);

        // h = (1 - z) * n + z * h_prev
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h_prev)?;
        tape.add(a, b)
    }

    /// Maps normalized value sequences [batch, d] to predicted normalized
    /// ranks [batch, d]. Inputs are expected in [0, 1] (see
    /// [`Tape::minmax_norm_rows`]); the sequence length must match.
    pub fn forward(&self, tape: &mut Tape, values: Var) -> Result<Var> {
        let shape = tape.shape(values).to_vec();
        let d = self.config.seq_len;
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::SequenceLength {
                expected: d,
                got: if shape.len() == 2 { shape[1] } else { 0 },
            });
        }
        let batch = shape[0];
        let h0 = tape.input(&Tensor::zeros(vec![batch, self.config.hidden]));

        let steps: Vec<Var> = (0..d)
            .map(|t| tape.slice_cols(values, t, 1))
            .collect::<Result<_>>()?;

        let mut fwd_states = Vec::with_capacity(d);
        let mut h = h0;
        for t in 0..d {
            h = self.cell(tape, &self.fwd, steps[t], h)?;
            fwd_states.push(h);
        }
        let mut bwd_states = vec![h0; d];
        let mut h = h0;
        for t in (0..d).rev() {
            h = self.cell(tape, &self.bwd, steps[t], h)?;
            bwd_states[t] = h;
        }

        let head_w = tape.param(&self.store, self.head_w);
        let head_b = tape.param(&self.store, self.head_b);
        let mut outputs = Vec::with_capacity(d);
        for t in 0..d {
            let both = tape.concat_cols(&[fwd_states[t], bwd_states[t]])?;
            let o = tape.matmul(both, head_w)?;
            outputs.push(tape.add_bias(o, head_b)?);
        }
        tape.concat_cols(&outputs)
    }

    /// Convenience inference on one raw (unnormalized) sequence.
    pub fn predict_ranks(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = tape.input(&Tensor::row(values));
        let normed = tape.minmax_norm_rows(v)?;
        let out = self.forward(&mut tape, normed)?;
        Ok(tape.value(out).to_vec())
    }

    pub fn save(&self, path: &Path, meta: &SorterMeta) -> Result<()> {
        self.store.save(path)?;
        let mut text = String::new();
        let _ = writeln!(text, "seq_len = {}", meta.seq_len);
        let _ = writeln!(text, "hidden = {}", meta.hidden);
        let _ = writeln!(text, "seed = {}", meta.seed);
        let _ = writeln!(text, "epochs = {}", meta.epochs);
        let _ = writeln!(text, "batches = {}", meta.batches);
        let _ = writeln!(text, "heldout_spearman = {:.6}", meta.heldout_spearman);
        let meta_path = sidecar_path(path);
        std::fs::write(&meta_path, text).map_err(|e| Error::io(meta_path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<(Self, SorterMeta)> {
        let meta_path = sidecar_path(path);
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        let mut meta = SorterMeta {
            seq_len: 0,
            hidden: 0,
            seed: 0,
            epochs: 0,
            batches: 0,
            heldout_spearman: f64::NAN,
        };
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seq_len" => meta.seq_len = parse(v, k)?,
                "hidden" => meta.hidden = parse(v, k)?,
                "seed" => meta.seed = parse(v, k)?,
                "epochs" => meta.epochs = parse(v, k)?,
                "batches" => meta.batches = parse(v, k)?,
                "heldout_spearman" => {
                    meta.heldout_spearman = v
                        .parse()
                        .map_err(|_| Error::Config(format!("bad value for {k}: {v}")))?
                }
                _ => {}
            }
        }
        if meta.seq_len < 2 || meta.hidden == 0 {
            return Err(Error::Config(format!(
                "sidecar {} is missing seq_len/hidden",
                meta_path.display()
            )));
        }
        let store = ParamStore::load(path)?;
        let mut sorter = Sorter::new(SorterConfig { seq_len: meta.seq_len, hidden: meta.hidden }, 0)?;
        if store.len() != sorter.store.len() {
            return Err(Error::Config(format!(
                "parameter dump {} does not match a sorter of hidden size {}",
                path.display(),
                meta.hidden
            )));
        }
        for (id, p) in store.iter() {
            if sorter.store.name(id) != p.name || sorter.store.value(id).shape() != p.value.shape() {
                return Err(Error::Config(format!("unexpected parameter `{}` in dump", p.name)));
            }
        }
        sorter.store = store;
        Ok((sorter, meta))
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    std::path::PathBuf::from(os)
}

fn parse<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value for {key}: {v}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_sorter_emits_finite_output_of_right_length() {
        let sorter = Sorter::new(SorterConfig { seq_len: 5, hidden: 8 }, 3).unwrap();
        let out = sorter.predict_ranks(&[0.9, 0.1, 0.5, 0.3, 0.7]).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_sequence_length_rejected() {
        let sorter = Sorter::new(SorterConfig { seq_len: 4, hidden: 8 }, 3).unwrap();
        let err = sorter.predict_ranks(&[0.1, 0.2, 0.3]).unwrap_err();
        assert!(matches!(err, Error::SequenceLength { expected: 4, got: 3 }));
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = SorterConfig { seq_len: 4, hidden: 8 };
        let a = Sorter::new(cfg, 7).unwrap();
        let b = Sorter::new(cfg, 7).unwrap();
        assert!(a.store.bit_identical(&b.store));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sorter.bin");
        let sorter = Sorter::new(SorterConfig { seq_len: 6, hidden: 8 }, 11).unwrap();
        let meta = SorterMeta {
            seq_len: 6,
            hidden: 8,
            seed: 11,
            epochs: 0,
            batches: 0,
            heldout_spearman: 0.5,
        };
        sorter.save(&path, &meta).unwrap();
        let (loaded, lmeta) = Sorter::load(&path).unwrap();
        assert!(sorter.store.bit_identical(&loaded.store));
        assert_eq!(lmeta.seq_len, 6);
        assert_eq!(lmeta.hidden, 8);
        let a = sorter.predict_ranks(&[0.1, 0.9, 0.4, 0.2, 0.8, 0.6]).unwrap();
        let b = loaded.predict_ranks(&[0.1, 0.9, 0.4, 0.2, 0.8, 0.6]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batched_forward_matches_single_rows() {
        let sorter = Sorter::new(SorterConfig { seq_len: 4, hidden: 8 }, 5).unwrap();
        let rows = [[0.0, 0.3, 0.9, 0.6], [1.0, 0.2, 0.5, 0.0]];
        let mut tape = Tape::new();
        let batch = tape
            .input(&Tensor::new(vec![2, 4], rows.concat()).unwrap());
        let out = sorter.forward(&mut tape, batch).unwrap();
        let batched = tape.value(out).to_vec();
        for (i, row) in rows.iter().enumerate() {
            let mut t = Tape::new();
            let v = t.input(&Tensor::row(row));
            let o = sorter.forward(&mut t, v).unwrap();
            assert_eq!(t.value(o), &batched[i * 4..(i + 1) * 4]);
        }
    }
}
