//! CMP files, compression report documents and CSV traces.
//!
//! Both documents are JSON. Floats are written in their shortest
//! round-tripping decimal form, so saving and loading is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmp::{Occupancy, TabularCmp};
use crate::error::{Error, Result};
use crate::psca::CompressionReport;
use crate::tasks::RewardFn;

pub const CMP_FORMAT_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub rmax: f64,
    /// `R[s][a]`, s-major.
    pub table: Vec<f64>,
}

/// On-disk CMP description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmpFile {
    pub format_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub init_dist: Vec<f64>,
    /// Dense `P[s][a][s']`, s-major, a-major, s'-minor.
    pub transition: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl CmpFile {
    pub fn from_model(cmp: &TabularCmp, reward: Option<&RewardFn>) -> Self {
        Self {
            format_version: CMP_FORMAT_VERSION,
            n_states: cmp.n_states(),
            n_actions: cmp.n_actions(),
            discount: cmp.discount(),
            init_dist: cmp.init_dist().to_vec(),
            transition: cmp.transition().to_vec(),
            reward: reward.map(|r| RewardSection {
                rmax: r.rmax,
                table: r.table.clone(),
            }),
            metadata: BTreeMap::new(),
        }
    }

    /// Validates the document and builds the model.
    pub fn to_model(&self) -> Result<(TabularCmp, Option<RewardFn>)> {
        if self.format_version != CMP_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported format_version {}, expected {CMP_FORMAT_VERSION}",
                self.format_version
            )));
        }
        let cmp = TabularCmp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.init_dist.clone(),
            self.discount,
        )?;
        let reward = self
            .reward
            .as_ref()
            .map(|r| RewardFn::new(self.n_states, self.n_actions, r.table.clone(), r.rmax))
            .transpose()?;
        Ok((cmp, reward))
    }
}

fn parse_error(path: &Path, err: serde_json::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses a CMP document from text; `origin` names it in errors.
pub fn parse_cmp(text: &str, origin: &Path) -> Result<(TabularCmp, Option<RewardFn>)> {
    let file: CmpFile = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    file.to_model()
}

pub fn load_cmp(path: &Path) -> Result<(TabularCmp, Option<RewardFn>)> {
    parse_cmp(&fs::read_to_string(path)?, path)
}

pub fn save_cmp(cmp: &TabularCmp, reward: Option<&RewardFn>, path: &Path) -> Result<()> {
    write_json(&CmpFile::from_model(cmp, reward), path)
}

/// Self-contained compression result: the model, the run and the
/// occupancies of the final cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub tool_version: String,
    pub environment: String,
    pub cmp: CmpFile,
    pub occupancies: Vec<Occupancy>,
    pub report: CompressionReport,
}

impl ReportFile {
    pub fn new(environment: &str, cmp: &TabularCmp, report: CompressionReport) -> Result<Self> {
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            environment: environment.to_string(),
            cmp: CmpFile::from_model(cmp, None),
            occupancies: report.cover.occupancies(cmp)?,
            report,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

pub fn save_report(report: &ReportFile, path: &Path) -> Result<()> {
    write_json(report, path)
}

pub fn load_report(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path)?;
    let file: ReportFile = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    if file.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported report format_version {}",
            file.format_version
        )));
    }
    let (cmp, _) = file.cmp.to_model()?;
    file.report.cover.validate(&cmp)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub lp_value: f64,
    pub cover_bound: f64,
    pub z_estimate: f64,
}

/// Per-round `(K, V, B, z)` rows of a compression run.
pub fn trace_rows(report: &CompressionReport) -> Vec<TraceRow> {
    report
        .lp_value_trace
        .iter()
        .zip(&report.cover_bound_trace)
        .zip(&report.z_estimate_trace)
        .enumerate()
        .map(|(i, ((v, b), z))| TraceRow {
            k: i + 1,
            lp_value: *v,
            cover_bound: *b,
            z_estimate: *z,
        })
        .collect()
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    write_csv(rows, fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{river_swim, RiverSwimParams};
    use crate::instances::random_cmp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_cmp_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cmp.json");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cmp = random_cmp(&mut rng, 4, 3);
            save_cmp(&cmp, None, &path).unwrap();
            let (back, reward) = load_cmp(&path).unwrap();
            assert!(reward.is_none());
            assert_eq!(
                back.transition().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                cmp.transition().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(back, cmp);
        }
    }

    #[test]
    fn reward_round_trips() {
        let (cmp, reward) = river_swim(&RiverSwimParams::default()).unwrap();
        let text = serde_json::to_string(&CmpFile::from_model(&cmp, Some(&reward))).unwrap();
        let (back, r) = parse_cmp(&text, Path::new("mem")).unwrap();
        assert_eq!(back, cmp);
        assert_eq!(r.unwrap(), reward);
    }

    #[test]
    fn bad_row_names_the_pair() {
        let text = r#"{"format_version": 1, "n_states": 2, "n_actions": 1, "discount": 0.9,
            "init_dist": [1.0, 0.0], "transition": [0.5, 0.5, 0.4, 0.5]}"#;
        let err = parse_cmp(text, Path::new("x.json")).unwrap_err().to_string();
        assert!(err.contains("s=1, a=0"), "{err}");
    }

    #[test]
    fn syntax_error_has_location() {
        let text = "{\n  \"format_version\": 1,\n  \"n_states\": ,\n}";
        match parse_cmp(text, Path::new("bad.json")) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "bad.json");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let unknown = r#"{"format_version": 1, "n_states": 1, "n_actions": 1, "discount": 0.5,
            "init_dist": [1.0], "transition": [1.0], "extra": 3}"#;
        assert!(matches!(
            parse_cmp(unknown, Path::new("u.json")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_has_header() {
        let rows = vec![TraceRow { k: 1, lp_value: 2.0, cover_bound: 4.0, z_estimate: 3.5 }];
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "k,lp_value,cover_bound,z_estimate\n1,2.0,4.0,3.5\n");
    }
}
