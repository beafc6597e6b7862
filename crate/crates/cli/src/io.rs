//! Output directories, run manifests and CSV files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use samkit::datagen::{Trajectory, TrajectoryRecord};
use samkit::JointConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parameters: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

pub struct Output {
    pub dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn manifest(
        &self,
        subcommand: &str,
        config_path: Option<&Path>,
        seed: u64,
        parameters: serde_json::Value,
    ) -> Result<()> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let m = RunManifest {
            tool: "samkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            output_dir: self.dir.clone(),
            parameters,
            created,
        };
        self.write_json("manifest.json", &m)?;
        Ok(())
    }
}

pub fn joints_header(prefix: &str, suffix: &str) -> Vec<String> {
    (1..=7).map(|j| format!("{prefix}q{j}{suffix}")).collect()
}

/// Writes `t,q1..q7` rows.
pub fn write_joint_csv(path: &Path, rows: &[JointConfig]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend(joints_header("", ""));
    w.write_record(&header)?;
    for (t, q) in rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(q.0.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `t,q1..q7` rows; the `t` column is ignored.
pub fn read_joint_csv(path: &Path) -> Result<Vec<JointConfig>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 8 {
            bail!(
                "{}: row {} has {} columns, expected 8",
                path.display(),
                i + 1,
                rec.len()
            );
        }
        let mut q = JointConfig::ZERO;
        for j in 0..7 {
            q[j] = rec[j + 1]
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        }
        out.push(q);
    }
    Ok(out)
}

/// Sidecar metadata of one dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub q1: f64,
    pub seed: u64,
    pub split: String,
    pub records: usize,
    pub plant_hash: String,
}

pub fn write_trajectory(
    dir: &Path,
    split: &str,
    tr: &Trajectory,
    plant_hash: &str,
) -> Result<PathBuf> {
    let stem = format!("{split}_q1_{}", tr.q1);
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["t".to_string()];
    header.extend(joints_header("", "_cmd"));
    header.extend(joints_header("", "_phy"));
    w.write_record(&header)?;
    for r in &tr.records {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.q_cmd.0.iter().chain(&r.q_phy.0).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = DatasetMeta {
        q1: tr.q1,
        seed: tr.seed,
        split: split.into(),
        records: tr.records.len(),
        plant_hash: plant_hash.into(),
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(csv_path)
}

pub fn read_trajectory(csv_path: &Path) -> Result<(Trajectory, DatasetMeta)> {
    let meta_path = csv_path.with_extension("json");
    let meta: DatasetMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path)
            .with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    let mut r = csv::Reader::from_path(csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))?;
    let mut records = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 15 {
            bail!(
                "{}: row {} has {} columns, expected 15",
                csv_path.display(),
                i + 1,
                rec.len()
            );
        }
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()?;
        records.push(TrajectoryRecord {
            t: rec[0].trim().parse()?,
            q_cmd: JointConfig(std::array::from_fn(|j| v[j])),
            q_phy: JointConfig(std::array::from_fn(|j| v[7 + j])),
        });
    }
    Ok((
        Trajectory {
            q1: meta.q1,
            seed: meta.seed,
            records,
        },
        meta,
    ))
}

/// All dataset files of `split` in `dir`, sorted by name.
pub fn read_split(dir: &Path, split: &str) -> Result<Vec<(Trajectory, DatasetMeta)>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(&format!("{split}_")))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no {split} dataset files in {}", dir.display());
    }
    paths.iter().map(|p| read_trajectory(p)).collect()
}

/// SHA-256 of the canonical JSON of the plant parameters.
pub fn plant_hash(params: &samkit::plant::PlantParams) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_string(params)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
