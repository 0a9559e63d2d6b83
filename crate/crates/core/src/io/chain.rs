//! Chain directories: a JSON manifest plus one flat file per parameter.
//!
//! The manifest carries the schema tag, seed, dimensions, labels and the
//! sampler configuration. Wall-clock timing goes to a separate file so that
//! identical runs produce byte-identical manifests and draw files.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dimensions, PanelLabels};
use crate::sampler::{ChainOutput, Draw, SamplerConfig, Timing};

pub const SCHEMA: &str = "bnppc-chain/1";
pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawFormat {
    #[default]
    Csv,
    Binary,
}

impl std::str::FromStr for DrawFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DrawFormat::Csv),
            "binary" | "bin" => Ok(DrawFormat::Binary),
            other => Err(Error::config(format!("unknown draw format '{other}' (csv or binary)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub format: DrawFormat,
    pub n_draws: usize,
    pub dims: Dimensions,
    pub labels: PanelLabels,
    pub config: SamplerConfig,
    pub files: Vec<String>,
}

fn file_name(stem: &str, format: DrawFormat) -> String {
    match format {
        DrawFormat::Csv => format!("{stem}.csv"),
        DrawFormat::Binary => format!("{stem}.bin"),
    }
}

/// Writes `chain` into `dir`, creating it if needed.
pub fn write_chain(dir: impl AsRef<Path>, chain: &ChainOutput, format: DrawFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut stems = vec!["assignments", "scalars", "beta", "theta"];
    if chain.config.store_unit_coefficients {
        stems.push("unit_beta");
    }
    let files: Vec<String> = stems.iter().map(|s| file_name(s, format)).collect();
    let manifest = Manifest {
        schema: SCHEMA.into(),
        seed: chain.seed,
        format,
        n_draws: chain.draws.len(),
        dims: chain.dims,
        labels: chain.labels.clone(),
        config: chain.config.clone(),
        files: files.clone(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join(TIMING), serde_json::to_string_pretty(&chain.timing)? + "\n")?;
    for (stem, name) in stems.iter().zip(&files) {
        let w = BufWriter::new(fs::File::create(dir.join(name))?);
        match format {
            DrawFormat::Csv => write_csv(stem, chain, w)?,
            DrawFormat::Binary => write_binary(stem, chain, w)?,
        }
    }
    Ok(())
}

fn write_csv<W: Write>(stem: &str, chain: &ChainOutput, w: W) -> Result<()> {
    let labels = &chain.labels;
    let mut out = csv::Writer::from_writer(w);
    match stem {
        "assignments" => {
            let mut header = vec!["draw".to_string()];
            header.extend(labels.unit_ids.iter().cloned());
            out.write_record(&header)?;
            for (d, draw) in chain.draws.iter().enumerate() {
                let mut row = vec![d.to_string()];
                row.extend(draw.assignments.iter().map(|s| (s + 1).to_string()));
                out.write_record(&row)?;
            }
        }
        "scalars" => {
            out.write_record(["draw", "iteration", "n_clusters", "alpha", "log_likelihood"])?;
            for (d, draw) in chain.draws.iter().enumerate() {
                out.write_record([
                    d.to_string(),
                    draw.iteration.to_string(),
                    draw.n_clusters().to_string(),
                    draw.alpha.to_string(),
                    draw.log_likelihood.to_string(),
                ])?;
            }
        }
        "beta" | "unit_beta" => {
            let unit = stem == "unit_beta";
            out.write_record(["draw", if unit { "unit" } else { "cluster" }, "covariate", "category", "value"])?;
            for (d, draw) in chain.draws.iter().enumerate() {
                let blocks: Vec<(String, &DMatrix<f64>)> = if unit {
                    draw.assignments
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| (labels.unit_ids[i].clone(), &draw.beta_star[s]))
                        .collect()
                } else {
                    draw.beta_star.iter().enumerate().map(|(c, b)| ((c + 1).to_string(), b)).collect()
                };
                for (id, block) in blocks {
                    for k in 0..block.nrows() {
                        for j in 0..block.ncols() {
                            out.write_record([
                                d.to_string(),
                                id.clone(),
                                labels.cluster_covariate_names[k].clone(),
                                labels.category_names[j].clone(),
                                block[(k, j)].to_string(),
                            ])?;
                        }
                    }
                }
            }
        }
        "theta" => {
            let mut header = vec!["draw".to_string()];
            for k in &labels.global_covariate_names {
                for j in &labels.category_names[..chain.dims.n_free_categories()] {
                    header.push(format!("{k}:{j}"));
                }
            }
            out.write_record(&header)?;
            for (d, draw) in chain.draws.iter().enumerate() {
                let mut row = vec![d.to_string()];
                for k in 0..draw.theta.nrows() {
                    for j in 0..draw.theta.ncols() {
                        row.push(draw.theta[(k, j)].to_string());
                    }
                }
                out.write_record(&row)?;
            }
        }
        _ => unreachable!("unknown draw file {stem}"),
    }
    out.flush()?;
    Ok(())
}

fn write_binary<W: Write>(stem: &str, chain: &ChainOutput, mut w: W) -> Result<()> {
    let put_block = |w: &mut W, b: &DMatrix<f64>| -> Result<()> {
        for k in 0..b.nrows() {
            for j in 0..b.ncols() {
                w.write_all(&b[(k, j)].to_le_bytes())?;
            }
        }
        Ok(())
    };
    for draw in &chain.draws {
        match stem {
            "assignments" => {
                for &s in &draw.assignments {
                    w.write_all(&(s as u32 + 1).to_le_bytes())?;
                }
            }
            "scalars" => {
                w.write_all(&(draw.iteration as u64).to_le_bytes())?;
                w.write_all(&(draw.n_clusters() as u64).to_le_bytes())?;
                w.write_all(&draw.alpha.to_le_bytes())?;
                w.write_all(&draw.log_likelihood.to_le_bytes())?;
            }
            "beta" => {
                for b in &draw.beta_star {
                    put_block(&mut w, b)?;
                }
            }
            "unit_beta" => {
                for &s in &draw.assignments {
                    put_block(&mut w, &draw.beta_star[s])?;
                }
            }
            "theta" => put_block(&mut w, &draw.theta)?,
            _ => unreachable!("unknown draw file {stem}"),
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema != SCHEMA {
        return Err(Error::input(format!(
            "unsupported chain schema '{}' (expected '{SCHEMA}')",
            manifest.schema
        )));
    }
    Ok(manifest)
}

/// Reads a chain directory written by [`write_chain`].
pub fn read_chain(dir: impl AsRef<Path>) -> Result<ChainOutput> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let timing = fs::read_to_string(dir.join(TIMING))
        .ok()
        .and_then(|t| serde_json::from_str::<Timing>(&t).ok())
        .unwrap_or_default();
    let draws = match manifest.format {
        DrawFormat::Csv => read_csv_draws(dir, &manifest)?,
        DrawFormat::Binary => read_binary_draws(dir, &manifest)?,
    };
    if draws.len() != manifest.n_draws {
        return Err(Error::input(format!(
            "manifest lists {} draws, files hold {}",
            manifest.n_draws,
            draws.len()
        )));
    }
    Ok(ChainOutput {
        draws,
        config: manifest.config,
        dims: manifest.dims,
        labels: manifest.labels,
        timing,
        seed: manifest.seed,
    })
}

fn parse<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::input(format!("bad {what} value '{raw}' in chain file")))
}

fn read_csv_draws(dir: &Path, m: &Manifest) -> Result<Vec<Draw>> {
    let (kc, knc, jm1) = (m.dims.n_cluster_covariates, m.dims.n_global_covariates, m.dims.n_free_categories());
    let open = |stem: &str| -> Result<csv::Reader<fs::File>> { Ok(csv::Reader::from_path(dir.join(format!("{stem}.csv")))?) };

    let mut draws = Vec::with_capacity(m.n_draws);
    for rec in open("scalars")?.records() {
        let rec = rec?;
        let m_c: usize = parse(&rec[2], "n_clusters")?;
        draws.push(Draw {
            iteration: parse(&rec[1], "iteration")?,
            assignments: Vec::new(),
            alpha: parse(&rec[3], "alpha")?,
            beta_star: vec![DMatrix::zeros(kc, jm1); m_c],
            theta: DMatrix::zeros(knc, jm1),
            log_likelihood: parse(&rec[4], "log_likelihood")?,
        });
    }
    for rec in open("assignments")?.records() {
        let rec = rec?;
        let d: usize = parse(&rec[0], "draw")?;
        let labels = rec
            .iter()
            .skip(1)
            .map(|v| parse::<usize>(v, "label").map(|s| s.wrapping_sub(1)))
            .collect::<Result<Vec<_>>>()?;
        draw_mut(&mut draws, d)?.assignments = labels;
    }
    let cov_index = |name: &str| m.labels.cluster_covariate_names.iter().position(|n| n == name);
    let cat_index = |name: &str| m.labels.category_names.iter().position(|n| n == name);
    for rec in open("beta")?.records() {
        let rec = rec?;
        let d: usize = parse(&rec[0], "draw")?;
        let c: usize = parse::<usize>(&rec[1], "cluster")?.wrapping_sub(1);
        let k = cov_index(&rec[2]).ok_or_else(|| Error::input(format!("unknown covariate '{}'", &rec[2])))?;
        let j = cat_index(&rec[3]).ok_or_else(|| Error::input(format!("unknown category '{}'", &rec[3])))?;
        let v: f64 = parse(&rec[4], "beta")?;
        let draw = draw_mut(&mut draws, d)?;
        let block = draw
            .beta_star
            .get_mut(c)
            .ok_or_else(|| Error::input(format!("draw {d} has no cluster {}", c.wrapping_add(1))))?;
        if k >= kc || j >= jm1 {
            return Err(Error::input("coefficient index out of range in beta file"));
        }
        block[(k, j)] = v;
    }
    for rec in open("theta")?.records() {
        let rec = rec?;
        let d: usize = parse(&rec[0], "draw")?;
        let draw = draw_mut(&mut draws, d)?;
        if rec.len() != 1 + knc * jm1 {
            return Err(Error::input("theta file has the wrong width"));
        }
        for k in 0..knc {
            for j in 0..jm1 {
                draw.theta[(k, j)] = parse(&rec[1 + k * jm1 + j], "theta")?;
            }
        }
    }
    check_draws(&draws, m)?;
    Ok(draws)
}

fn draw_mut(draws: &mut [Draw], d: usize) -> Result<&mut Draw> {
    draws
        .get_mut(d)
        .ok_or_else(|| Error::input(format!("draw {d} is missing from scalars")))
}

fn check_draws(draws: &[Draw], m: &Manifest) -> Result<()> {
    for (d, draw) in draws.iter().enumerate() {
        if draw.assignments.len() != m.dims.n_units {
            return Err(Error::input(format!("draw {d} has {} labels", draw.assignments.len())));
        }
        crate::model::ClusterState::from_parts(draw.assignments.clone(), draw.beta_star.clone())
            .map_err(|e| Error::input(format!("draw {d}: {e}")))?;
    }
    Ok(())
}

struct Bytes {
    buf: Vec<u8>,
    pos: usize,
}

impl Bytes {
    fn open(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Ok(Bytes { buf, pos: 0 })
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::input("binary chain file is truncated"))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn block(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut b = DMatrix::zeros(rows, cols);
        for k in 0..rows {
            for j in 0..cols {
                b[(k, j)] = self.f64()?;
            }
        }
        Ok(b)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::input("binary chain file has trailing bytes"));
        }
        Ok(())
    }
}

fn read_binary_draws(dir: &Path, m: &Manifest) -> Result<Vec<Draw>> {
    let (n, kc, knc, jm1) = (
        m.dims.n_units,
        m.dims.n_cluster_covariates,
        m.dims.n_global_covariates,
        m.dims.n_free_categories(),
    );
    let mut scalars = Bytes::open(&dir.join("scalars.bin"))?;
    let mut assignments = Bytes::open(&dir.join("assignments.bin"))?;
    let mut beta = Bytes::open(&dir.join("beta.bin"))?;
    let mut theta = Bytes::open(&dir.join("theta.bin"))?;
    let mut draws = Vec::with_capacity(m.n_draws);
    for _ in 0..m.n_draws {
        let iteration = scalars.u64()? as usize;
        let m_c = scalars.u64()? as usize;
        let alpha = scalars.f64()?;
        let log_likelihood = scalars.f64()?;
        let labels = (0..n)
            .map(|_| assignments.u32().map(|s| (s as usize).wrapping_sub(1)))
            .collect::<Result<Vec<_>>>()?;
        let beta_star = (0..m_c).map(|_| beta.block(kc, jm1)).collect::<Result<Vec<_>>>()?;
        draws.push(Draw {
            iteration,
            assignments: labels,
            alpha,
            beta_star,
            theta: theta.block(knc, jm1)?,
            log_likelihood,
        });
    }
    for b in [&scalars, &assignments, &beta, &theta] {
        b.done()?;
    }
    check_draws(&draws, m)?;
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::random_panel;
    use crate::sampler::run_mcmc_seeded;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(store_units: bool) -> ChainOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = Dimensions {
            n_units: 6,
            n_periods: 3,
            n_categories: 3,
            n_cluster_covariates: 2,
            n_global_covariates: 2,
        };
        let data = random_panel(&mut rng, dims, 4);
        let mut cfg = SamplerConfig::new(&dims);
        cfg.n_burnin = 5;
        cfg.n_retained = 12;
        cfg.seed = 3;
        cfg.store_unit_coefficients = store_units;
        cfg.init = crate::sampler::InitPolicy::RandomK { k: 3 };
        run_mcmc_seeded(&data, &cfg).unwrap()
    }

    #[test]
    fn round_trips_in_both_formats() {
        let out = chain(true);
        for format in [DrawFormat::Csv, DrawFormat::Binary] {
            let dir = tempfile::tempdir().unwrap();
            write_chain(dir.path(), &out, format).unwrap();
            let back = read_chain(dir.path()).unwrap();
            assert_eq!(back.draws, out.draws);
            assert_eq!(back.config, out.config);
            assert_eq!(back.labels, out.labels);
            assert!(dir.path().join(file_name("unit_beta", format)).exists());
        }
    }

    #[test]
    fn manifest_has_schema_and_no_timing() {
        let out = chain(false);
        let dir = tempfile::tempdir().unwrap();
        write_chain(dir.path(), &out, DrawFormat::Csv).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("\"schema\": \"bnppc-chain/1\""));
        assert!(!text.contains("elapsed"));
        let assignments = fs::read_to_string(dir.path().join("assignments.csv")).unwrap();
        assert!(assignments.starts_with("draw,u1,u2"));
        assert!(!assignments.lines().skip(1).any(|l| l.split(',').skip(1).any(|v| v == "0")));

        let mut m = read_manifest(dir.path()).unwrap();
        m.schema = "other/9".into();
        fs::write(dir.path().join(MANIFEST), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(read_chain(dir.path()).is_err());
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let out = chain(false);
        let dir = tempfile::tempdir().unwrap();
        write_chain(dir.path(), &out, DrawFormat::Binary).unwrap();
        let path = dir.path().join("theta.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_chain(dir.path()).is_err());
    }
}
