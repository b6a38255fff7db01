//! CSV products and the run manifest.
//!
//! All files use LF line endings and render reals with nine digits after the
//! decimal point, so identical results always produce identical bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{PlaneResult, SweepRow};
use crate::metrics::{PopulationStats, SnapshotSet};
use crate::model::ALPHA_LEVELS;

/// Fixed-point rendering used by every product.
pub fn real(x: f64) -> String {
    format!("{x:.9}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, body: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn timeseries_header() -> String {
    let mut cols = vec![
        "step".to_string(),
        "mean_epsilon".into(),
        "mean_alpha".into(),
        "frac_cooperate".into(),
        "frac_defect".into(),
    ];
    cols.extend((0..ALPHA_LEVELS).map(|i| format!("alpha_hist_{i}")));
    cols.join(",")
}

pub fn render_timeseries(series: &[PopulationStats]) -> String {
    let mut out = timeseries_header();
    out.push('\n');
    for s in series {
        let mut fields = vec![
            s.step.to_string(),
            real(s.mean_epsilon),
            real(s.mean_alpha),
            real(s.frac_cooperate),
            real(s.frac_defect),
        ];
        fields.extend(s.alpha_histogram.iter().map(|&h| real(h)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_timeseries(series: &[PopulationStats], path: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("refusing to write an empty time series".into()));
    }
    write_all(path, &render_timeseries(series))
}

/// One parsed row of a time-series file.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeseriesRow {
    pub step: u64,
    pub values: Vec<f64>,
}

pub fn read_timeseries(path: &Path) -> Result<Vec<TimeseriesRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(timeseries_header().as_str()) {
        return Err(Error::InvalidConfig(format!("{}: unexpected header", path.display())));
    }
    lines
        .map(|line| {
            let mut fields = line.split(',');
            let bad = || Error::InvalidConfig(format!("{}: malformed row `{line}`", path.display()));
            let step = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let values = fields.map(|f| f.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            if values.len() != 4 + ALPHA_LEVELS {
                return Err(bad());
            }
            Ok(TimeseriesRow { step, values })
        })
        .collect()
}

pub const HEATMAP_HEADER: &str = "T,L,mean_epsilon,se_epsilon,mean_alpha,se_alpha";

/// Long-form heat map, one row per (T, L) cell sorted by L then T.
pub fn render_heatmap(plane: &PlaneResult) -> String {
    let mut cells: Vec<_> = plane.cells.iter().collect();
    cells.sort_by(|a, b| a.loner.total_cmp(&b.loner).then(a.temptation.total_cmp(&b.temptation)));
    let mut out = String::from(HEATMAP_HEADER);
    out.push('\n');
    for c in cells {
        let row = [c.temptation, c.loner, c.mean_epsilon, c.se_epsilon, c.mean_alpha, c.se_alpha].map(real);
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_heatmap(plane: &PlaneResult, path: &Path) -> Result<()> {
    if plane.cells.len() != plane.t_values.len() * plane.l_values.len() {
        return Err(Error::InvalidConfig("heat map cells do not match its axes".into()));
    }
    write_all(path, &render_heatmap(plane))
}

pub const SWEEP_HEADER: &str = "scheme,rule,T,L,mean_epsilon,se_epsilon,mean_alpha,se_alpha,replicates";

pub fn write_sweep_table(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        let c = &row.cell;
        let reals = [c.temptation, c.loner, c.mean_epsilon, c.se_epsilon, c.mean_alpha, c.se_alpha].map(real);
        out.push_str(&format!("{},{},{},{}\n", row.scheme, row.rule, reals.join(","), c.raw.len()));
    }
    write_all(path, &out)
}

pub const REPLICATES_HEADER: &str = "scheme,rule,T,L,replicate,seed,mean_epsilon,mean_alpha";

/// Raw per-replicate final values for every plane.
pub fn write_replicates(planes: &[PlaneResult], path: &Path) -> Result<()> {
    let mut out = String::from(REPLICATES_HEADER);
    out.push('\n');
    for plane in planes {
        for c in &plane.cells {
            for r in &c.raw {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    plane.scheme,
                    plane.rule,
                    real(c.temptation),
                    real(c.loner),
                    r.replicate,
                    r.seed,
                    real(r.mean_epsilon),
                    real(r.mean_alpha)
                ));
            }
        }
    }
    write_all(path, &out)
}

/// Paths of the three grids written for `stem`.
pub fn snapshot_paths(stem: &Path) -> [PathBuf; 3] {
    let with = |suffix: &str| {
        let mut name = stem.as_os_str().to_owned();
        name.push(suffix);
        PathBuf::from(name)
    };
    [with(".epsilon.csv"), with(".alpha.csv"), with(".strategy.csv")]
}

fn render_grid<T>(width: usize, values: &[T], fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(&fmt).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.epsilon.csv`, `<stem>.alpha.csv` and `<stem>.strategy.csv`,
/// one lattice row per line.
pub fn write_snapshot(snapshot: &SnapshotSet, stem: &Path) -> Result<[PathBuf; 3]> {
    let paths = snapshot_paths(stem);
    let w = snapshot.width;
    write_all(&paths[0], &render_grid(w, &snapshot.grid_epsilon, |&x| real(x)))?;
    write_all(&paths[1], &render_grid(w, &snapshot.grid_alpha, |&x| real(x)))?;
    write_all(&paths[2], &render_grid(w, &snapshot.grid_strategy, |s| s.to_string()))?;
    Ok(paths)
}

/// Reads one snapshot grid back as reals.
pub fn read_grid(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("{}: bad value `{f}`", path.display())))
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to regenerate an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved command line, without `--out`.
    pub args: Vec<String>,
    /// Resolved settings in config-file form.
    pub config: serde_json::Value,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Manifest {
    /// Hashes the files named in `files` (relative to `dir`) and writes
    /// `manifest.json` beside them.
    pub fn write(mut self, dir: &Path, files: &[String]) -> Result<PathBuf> {
        self.files = files
            .iter()
            .map(|name| {
                let path = dir.join(name);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let hash = Sha256::digest(&bytes);
                Ok(FileEntry {
                    name: name.clone(),
                    sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
                })
            })
            .collect::<Result<_>>()?;
        let path = dir.join(MANIFEST_NAME);
        let mut body = serde_json::to_string_pretty(&self).expect("manifest serializes");
        body.push('\n');
        write_all(&path, &body)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{AggregateCell, ReplicateRecord};
    use crate::metrics::{population_stats, snapshot};
    use crate::model::{initialize, AgentState, AlphaLevel, InitScheme, Lattice, LatticeConfig};
    use crate::rng::RngStream;
    use crate::UpdateRule;

    #[test]
    fn timeseries_first_row_of_pure_cooperators() {
        let l = Lattice::filled(LatticeConfig::square(4).unwrap(), AgentState::cooperator(AlphaLevel::NEVER)).unwrap();
        let text = render_timeseries(&[population_stats(&l, 0)]);
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 14);
        assert!(header.ends_with("alpha_hist_8"));
        let zero = "0.000000000";
        let expect = format!("0,1.000000000,{zero},1.000000000,{zero},1.000000000,{}", vec![zero; 8].join(","));
        assert_eq!(lines.next().unwrap(), expect);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn timeseries_round_trip_at_printed_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let mut rng = RngStream::new(4);
        let series: Vec<_> = (0..5)
            .map(|t| {
                let l = initialize(&InitScheme::Pdpa, LatticeConfig::new(7, 3).unwrap(), &mut rng).unwrap();
                population_stats(&l, t * 10)
            })
            .collect();
        write_timeseries(&series, &path).unwrap();
        let rows = read_timeseries(&path).unwrap();
        assert_eq!(rows.len(), 5);
        for (row, s) in rows.iter().zip(&series) {
            assert_eq!(row.step, s.step);
            assert_eq!(real(row.values[0]), real(s.mean_epsilon));
            assert_eq!(real(row.values[4 + 3]), real(s.alpha_histogram[3]));
        }
        // re-rendering the parsed values reproduces the file byte for byte
        let mut again = timeseries_header();
        again.push('\n');
        for row in &rows {
            let mut fields = vec![row.step.to_string()];
            fields.extend(row.values.iter().map(|&v| real(v)));
            again.push_str(&fields.join(","));
            again.push('\n');
        }
        assert_eq!(again, fs::read_to_string(&path).unwrap());
        assert!(write_timeseries(&[], &path).is_err());
    }

    fn plane(nt: usize, nl: usize) -> PlaneResult {
        let t_values: Vec<f64> = (0..nt).map(|i| 1.0 + i as f64 * 0.05).collect();
        let l_values: Vec<f64> = (0..nl).map(|i| i as f64 * 0.05).collect();
        let mut cells = Vec::new();
        for &l in &l_values {
            for &t in &t_values {
                let raw = vec![ReplicateRecord { replicate: 0, seed: 1, mean_epsilon: 0.5, mean_alpha: 0.25 }];
                cells.push(AggregateCell::from_records(t, l, raw));
            }
        }
        PlaneResult { scheme: InitScheme::Pdpa, rule: UpdateRule::Synchronous, t_values, l_values, cells }
    }

    #[test]
    fn heatmap_rows_sorted_and_counted() {
        let text = render_heatmap(&plane(21, 21));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEATMAP_HEADER);
        assert_eq!(lines.len(), 1 + 441);
        assert_eq!(lines[1], "1.000000000,0.000000000,0.500000000,0.000000000,0.250000000,0.000000000");
        let keys: Vec<(f64, f64)> = lines[1..]
            .iter()
            .map(|l| {
                let v: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
                assert!(v[2..].iter().all(|x| (0.0..=1.0).contains(x)));
                (v[1], v[0])
            })
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn snapshot_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(10);
        let l = initialize(&InitScheme::Pdpa, LatticeConfig::new(6, 4).unwrap(), &mut rng).unwrap();
        let paths = write_snapshot(&snapshot(&l, 3), &dir.path().join("snap")).unwrap();
        assert!(paths[0].ends_with("snap.epsilon.csv"));
        let [eps, alpha, strat] = paths.map(|p| read_grid(&p).unwrap());
        assert_eq!(eps.len(), 4);
        assert!(eps.iter().all(|r| r.len() == 6));
        for r in 0..4 {
            for c in 0..6 {
                assert!(strat[r][c] == 0.0 || strat[r][c] == 1.0);
                let expect = (1.0 - strat[r][c]) * (1.0 - alpha[r][c]);
                assert!((eps[r][c] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_heatmap(&plane(2, 2), &blocker.join("sub/heat.csv")).unwrap_err();
        assert!(!err.is_validation());
        assert!(err.to_string().contains("file"), "{err}");
    }
}
