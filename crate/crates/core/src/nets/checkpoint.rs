//! Plain-text model checkpoints.
//!
//! Layout (one item per line, `#` starts a comment line):
//!
//! ```text
//! format ggan-checkpoint/1
//! seed <u64>
//! meta <key> <value...>              (zero or more)
//! generator.output_bound <f64 | inf>
//! generator.input_map_cap <f64 | none>
//! discriminator.mode <gradient-penalty | spectral-norm>
//! matrix <name> <rows> <cols>         followed by <rows> lines of <cols> values
//! vector <name> <len>                 followed by one line of <len> values
//! end
//! ```
//!
//! Matrix names are `generator.B`, `generator.A<l>`, `discriminator.A<l>`;
//! vector names are `generator.c<l>`, `discriminator.c<l>`, and in
//! spectral-norm mode `discriminator.u<l>` / `discriminator.v<l>`. Values are
//! row-major `f64` in shortest round-trip decimal form, so a save/load cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{DiscriminatorModel, GeneratorModel, Regularization, SpectralState};
use crate::error::{Error, Result};
use crate::numcore::{Affine, DenseMatrix, DenseVector};

const FORMAT: &str = "ggan-checkpoint/1";

/// A trained generator/critic pair plus the seed and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub meta: BTreeMap<String, String>,
}

fn push_matrix(out: &mut String, name: &str, m: &DenseMatrix) {
    let _ = writeln!(out, "matrix {name} {} {}", m.rows(), m.cols());
    for r in m.row_iter() {
        push_values(out, r);
    }
}

fn push_vector(out: &mut String, name: &str, v: &DenseVector) {
    let _ = writeln!(out, "vector {name} {}", v.len());
    push_values(out, v.as_slice());
}

fn push_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format {FORMAT}");
        let _ = writeln!(out, "seed {}", self.seed);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        let g = &self.generator;
        let _ = writeln!(out, "generator.output_bound {}", fmt_f64(g.output_bound));
        let _ = writeln!(
            out,
            "generator.input_map_cap {}",
            g.input_map_cap.map_or("none".to_string(), fmt_f64)
        );
        let _ = writeln!(out, "discriminator.mode {}", self.discriminator.mode);
        push_matrix(&mut out, "generator.B", &g.input_map);
        for (l, layer) in g.layers.iter().enumerate() {
            push_matrix(&mut out, &format!("generator.A{l}"), &layer.weight);
            push_vector(&mut out, &format!("generator.c{l}"), &layer.bias);
        }
        let dm = &self.discriminator;
        for (l, layer) in dm.layers.iter().enumerate() {
            push_matrix(&mut out, &format!("discriminator.A{l}"), &layer.weight);
            push_vector(&mut out, &format!("discriminator.c{l}"), &layer.bias);
        }
        for (l, s) in dm.spectral.iter().enumerate() {
            push_vector(&mut out, &format!("discriminator.u{l}"), &s.u);
            push_vector(&mut out, &format!("discriminator.v{l}"), &s.v);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut scalars: BTreeMap<String, String> = BTreeMap::new();
        let mut meta = BTreeMap::new();
        let mut matrices: BTreeMap<String, DenseMatrix> = BTreeMap::new();
        let mut vectors: BTreeMap<String, DenseVector> = BTreeMap::new();
        let mut ended = false;

        while let Some(line) = lines.next() {
            let mut parts = line.splitn(2, char::is_whitespace);
            let key = parts.next().unwrap_or_default();
            let rest = parts.next().unwrap_or_default().trim();
            match key {
                "end" => {
                    ended = true;
                    break;
                }
                "meta" => {
                    let mut kv = rest.splitn(2, char::is_whitespace);
                    let k = kv.next().filter(|k| !k.is_empty()).ok_or_else(|| bad("empty meta key"))?;
                    meta.insert(k.to_string(), kv.next().unwrap_or_default().trim().to_string());
                }
                "matrix" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    let [name, rows, cols] = f[..] else {
                        return Err(bad(format!("malformed matrix header `{line}`")));
                    };
                    let rows: usize = rows.parse().map_err(|_| bad(format!("bad row count in `{line}`")))?;
                    let cols: usize = cols.parse().map_err(|_| bad(format!("bad column count in `{line}`")))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let row = lines.next().ok_or_else(|| bad(format!("truncated matrix {name}")))?;
                        let before = data.len();
                        parse_values(row, &mut data)?;
                        if data.len() - before != cols {
                            return Err(bad(format!("matrix {name}: row with {} values, expected {cols}", data.len() - before)));
                        }
                    }
                    let m = DenseMatrix::new(rows, cols, data).map_err(|e| bad(format!("matrix {name}: {e}")))?;
                    matrices.insert(name.to_string(), m);
                }
                "vector" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    let [name, len] = f[..] else {
                        return Err(bad(format!("malformed vector header `{line}`")));
                    };
                    let len: usize = len.parse().map_err(|_| bad(format!("bad length in `{line}`")))?;
                    let mut data = Vec::with_capacity(len);
                    if len > 0 {
                        let row = lines.next().ok_or_else(|| bad(format!("truncated vector {name}")))?;
                        parse_values(row, &mut data)?;
                    }
                    if data.len() != len {
                        return Err(bad(format!("vector {name}: {} values, expected {len}", data.len())));
                    }
                    let v = DenseVector::new(data).map_err(|e| bad(format!("vector {name}: {e}")))?;
                    vectors.insert(name.to_string(), v);
                }
                _ => {
                    scalars.insert(key.to_string(), rest.to_string());
                }
            }
        }
        if !ended {
            return Err(bad("missing `end` line"));
        }
        match scalars.get("format").map(String::as_str) {
            Some(FORMAT) => {}
            other => return Err(bad(format!("unsupported format {other:?}"))),
        }
        let scalar = |k: &str| scalars.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let seed: u64 = scalar("seed")?.parse().map_err(|_| bad("bad seed"))?;
        let output_bound = parse_f64(scalar("generator.output_bound")?)?;
        let input_map_cap = match scalar("generator.input_map_cap")?.as_str() {
            "none" => None,
            v => Some(parse_f64(v)?),
        };
        let mode: Regularization = scalar("discriminator.mode")?
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;

        let mut take_m = |name: String| matrices.remove(&name).ok_or_else(|| bad(format!("missing matrix {name}")));
        let input_map = take_m("generator.B".into())?;
        let mut g_weights = Vec::new();
        while let Ok(w) = take_m(format!("generator.A{}", g_weights.len())) {
            g_weights.push(w);
        }
        let mut d_weights = Vec::new();
        while let Ok(w) = take_m(format!("discriminator.A{}", d_weights.len())) {
            d_weights.push(w);
        }
        let mut take_v = |name: String| vectors.remove(&name).ok_or_else(|| bad(format!("missing vector {name}")));
        let layers = |prefix: &str, weights: Vec<DenseMatrix>, take_v: &mut dyn FnMut(String) -> Result<DenseVector>| {
            weights
                .into_iter()
                .enumerate()
                .map(|(l, w)| {
                    let c = take_v(format!("{prefix}.c{l}"))?;
                    Affine::new(w, c).map_err(|e| bad(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()
        };
        let g_layers = layers("generator", g_weights, &mut take_v)?;
        let n_d = d_weights.len();
        let d_layers = layers("discriminator", d_weights, &mut take_v)?;
        let spectral = match mode {
            Regularization::GradientPenalty => Vec::new(),
            Regularization::SpectralNorm => (0..n_d)
                .map(|l| {
                    Ok(SpectralState {
                        u: take_v(format!("discriminator.u{l}"))?,
                        v: take_v(format!("discriminator.v{l}"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let generator = GeneratorModel {
            input_map,
            layers: g_layers,
            output_bound,
            input_map_cap,
        };
        if generator.layers.is_empty() {
            return Err(bad("generator has no layers"));
        }
        generator.validate().map_err(|e| bad(e.to_string()))?;
        let discriminator = DiscriminatorModel {
            layers: d_layers,
            mode,
            spectral,
        };
        if discriminator.layers.is_empty() {
            return Err(bad("discriminator has no layers"));
        }
        discriminator.validate().map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            seed,
            generator,
            discriminator,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        _ => s.parse().map_err(|_| bad(format!("bad number `{s}`"))),
    }
}

fn parse_values(line: &str, out: &mut Vec<f64>) -> Result<()> {
    for tok in line.split_whitespace() {
        out.push(tok.parse().map_err(|_| bad(format!("bad number `{tok}`")))?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_discriminator, init_generator, InitSpec};

    fn sample(mode: Regularization) -> Checkpoint {
        let spec = InitSpec::default().with_seed(3);
        let mut generator = init_generator(4, 6, 3, 5, &spec).unwrap().with_output_bound(2.5);
        generator.input_map.set(0, 0, 1.0 / 3.0);
        let discriminator = init_discriminator(5, 4, 2, mode, &spec).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("config.dataset".into(), "M1".into());
        Checkpoint {
            seed: 99,
            generator,
            discriminator,
            meta,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        for mode in [Regularization::SpectralNorm, Regularization::GradientPenalty] {
            let ck = sample(mode);
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn missing_end_is_rejected() {
        let text = sample(Regularization::SpectralNorm).to_text();
        let cut = text.trim_end().trim_end_matches("end");
        assert!(Checkpoint::from_text(cut).is_err());
    }

    #[test]
    fn missing_matrix_is_rejected() {
        let text = sample(Regularization::GradientPenalty).to_text();
        let broken = text.replace("matrix generator.B", "matrix generator.X");
        assert!(matches!(Checkpoint::from_text(&broken), Err(Error::Checkpoint(_))));
    }
}
