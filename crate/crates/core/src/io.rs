//! Output formats: versioned CSV diagnostics, binary snapshot series, run
//! manifests, and atomic file writes.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::integrator::{DiagRow, Snapshot, TrajectoryRecord};
use crate::spectral::{read_f64, read_u32, read_u64};

/// Version line heading every diagnostics CSV.
pub const DIAGNOSTICS_VERSION: &str = "# spe2d-diagnostics v1";

/// Columns of the diagnostics CSV:
/// `step`, `t`, `energy` = `|U|^2`, `enstrophy` = `||U||^2`,
/// `strong` = `|AU|^2`, `monitor` = `sup ||U||^2 + int |AU|^2`,
/// `localizer` = `int |u|_(2)^2` (zero unless a localization level is set),
/// and the two stopping flags.
pub const DIAGNOSTICS_COLUMNS: &str = "step,t,energy,enstrophy,strong,monitor,localizer,tau_nm_hit,tau_n_hit";

const SNAPSHOT_MAGIC: &[u8; 8] = b"SPE2DSNP";
const SNAPSHOT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes to a sibling temporary file, syncs it, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::arg("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn diagnostics_csv(rows: &[DiagRow]) -> String {
    let mut s = format!("{DIAGNOSTICS_VERSION}\n{DIAGNOSTICS_COLUMNS}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}\n",
            r.step, r.t, r.energy, r.enstrophy, r.strong, r.monitor, r.localizer, r.tau_nm_hit as u8, r.tau_n_hit as u8
        ));
    }
    s
}

/// Parses a diagnostics CSV back into rows; checks the version line.
pub fn parse_diagnostics_csv(text: &str) -> Result<Vec<DiagRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(DIAGNOSTICS_VERSION) || lines.next() != Some(DIAGNOSTICS_COLUMNS) {
        return Err(Error::Format("unsupported diagnostics header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Format(format!("diagnostics row has {} fields", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| Error::Format(e.to_string()));
            let flag = |i: usize| match f[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Format(format!("bad flag {other}"))),
            };
            Ok(DiagRow {
                step: f[0].parse().map_err(|e: std::num::ParseIntError| Error::Format(e.to_string()))?,
                t: num(1)?,
                energy: num(2)?,
                enstrophy: num(3)?,
                strong: num(4)?,
                monitor: num(5)?,
                localizer: num(6)?,
                tau_nm_hit: flag(7)?,
                tau_n_hit: flag(8)?,
            })
        })
        .collect()
}

/// Binary series of Galerkin coefficient snapshots: magic, version, order,
/// time step, count, then `(step, coeffs)` records, little-endian.
pub fn write_snapshots<W: Write>(mut out: W, order: usize, dt: f64, snaps: &[Snapshot]) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&(order as u32).to_le_bytes())?;
    out.write_all(&dt.to_le_bytes())?;
    out.write_all(&(snaps.len() as u64).to_le_bytes())?;
    for s in snaps {
        if s.coeffs.len() != order {
            return Err(Error::arg("snapshot length differs from the order"));
        }
        out.write_all(&(s.step as u64).to_le_bytes())?;
        for c in &s.coeffs {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshots<R: Read>(mut input: R) -> Result<(usize, f64, Vec<Snapshot>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a snapshot file".into()));
    }
    if read_u32(&mut input)? != SNAPSHOT_VERSION {
        return Err(Error::Format("unsupported snapshot version".into()));
    }
    let order = read_u32(&mut input)? as usize;
    let dt = read_f64(&mut input)?;
    let count = read_u64(&mut input)? as usize;
    let mut snaps = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let step = read_u64(&mut input)? as usize;
        let coeffs = (0..order).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
        snaps.push(Snapshot { step, coeffs });
    }
    Ok((order, dt, snaps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStatus {
    pub trajectory: u64,
    pub status: String,
    pub steps: usize,
}

/// Provenance of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    /// Unix seconds.
    pub started: f64,
    pub finished: f64,
    pub wall_seconds: f64,
    pub statuses: Vec<TrajectoryStatus>,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl TrajectoryStatus {
    pub fn of(trajectory: u64, rec: &TrajectoryRecord) -> Self {
        TrajectoryStatus { trajectory, status: rec.status.name().into(), steps: rec.last_good_step() }
    }
}

/// Collects written files and finally emits `manifest.json`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    started: f64,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new(), started: unix_now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&self.root.join(rel), bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel.into(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn finish(self, command: &str, config_hash: &str, seed: u64, threads: usize, statuses: Vec<TrajectoryStatus>) -> Result<Manifest> {
        let finished = unix_now();
        let m = Manifest {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            seed,
            threads,
            started: self.started,
            finished,
            wall_seconds: finished - self.started,
            statuses,
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
        atomic_write(&self.root.join("manifest.json"), text.as_bytes())?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagnostics_round_trip() {
        let rows = vec![DiagRow { step: 3, t: 0.3, energy: 1.5, enstrophy: 2.0, strong: 4.0, monitor: 6.0, localizer: 0.1, tau_nm_hit: false, tau_n_hit: true }];
        let back = parse_diagnostics_csv(&diagnostics_csv(&rows)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!((back[0].step, back[0].energy, back[0].tau_n_hit), (3, 1.5, true));
        assert!(parse_diagnostics_csv("step,t\n").is_err());
    }

    #[test]
    fn snapshots_round_trip() {
        let snaps = vec![Snapshot { step: 0, coeffs: vec![1.0, -2.0] }, Snapshot { step: 5, coeffs: vec![0.5, 0.25] }];
        let mut buf = Vec::new();
        write_snapshots(&mut buf, 2, 0.01, &snaps).unwrap();
        let (order, dt, back) = read_snapshots(buf.as_slice()).unwrap();
        assert_eq!((order, dt, back.len(), back[1].step, back[1].coeffs[1]), (2, 0.01, 2, 5, 0.25));
        buf[0] = b'X';
        assert!(read_snapshots(buf.as_slice()).is_err());
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("x.csv", b"a,b\n").unwrap();
        let m = out.finish("test", "abc", 7, 1, vec![]).unwrap();
        assert_eq!(m.files[0].sha256, sha256_hex(b"a,b\n"));
        let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!((back.files, back.seed), (m.files, 7));
    }
}
