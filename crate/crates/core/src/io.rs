//! Serialized layouts: versioned JSON documents, CSV tables and atomic file
//! writes.
//!
//! JSON floats are written in shortest round-trip form and parsed with full
//! precision, so every value reads back bit for bit. Non-finite values never
//! reach a document: the types that carry floats reject them on construction.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::capsolve::{Algorithm, CapacityResult};
use crate::error::{Error, Result};
use crate::grid::{DomainSpec, GridDomain, NodeSet};
use crate::potential::{DiscreteMeasure, PotentialResult};
use crate::propcheck::PropertyReport;
use crate::sobolev::GridFunction;

pub const FORMAT_VERSION: u32 = 1;

/// Checks the `format` and `version` fields every document starts with.
fn expect_header(found: &str, version: u32, format: &str) -> Result<()> {
    if found != format {
        return Err(Error::Format { what: "document", message: format!("expected {format}, found {found}") });
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            what: "document",
            message: format!("{format} version {version} is not supported (expected {FORMAT_VERSION})"),
        });
    }
    Ok(())
}

fn hex_id(domain: &GridDomain) -> String {
    format!("{:016x}", domain.id().0)
}

fn check_id(domain: &GridDomain, id: &str) -> Result<()> {
    if id != hex_id(domain) {
        return Err(Error::DomainMismatch);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDoc {
    pub format: String,
    pub version: u32,
    pub id: String,
    pub spec: DomainSpec,
    pub omega: Vec<usize>,
    pub closure: Vec<usize>,
}

impl DomainDoc {
    pub const FORMAT: &'static str = "pcap.domain";

    pub fn new(domain: &GridDomain) -> Self {
        DomainDoc {
            format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION,
            id: hex_id(domain),
            spec: domain.spec().clone(),
            omega: domain.omega_nodes(),
            closure: domain.closure_nodes().to_vec(),
        }
    }

    /// Rebuilds the domain and checks it against the stored node arrays.
    pub fn build(&self) -> Result<GridDomain> {
        expect_header(&self.format, self.version, Self::FORMAT)?;
        let domain = GridDomain::build(&self.spec)?;
        check_id(&domain, &self.id)?;
        if domain.omega_nodes() != self.omega || domain.closure_nodes() != self.closure.as_slice() {
            return Err(Error::DomainMismatch);
        }
        Ok(domain)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSetDoc {
    pub format: String,
    pub version: u32,
    pub domain: String,
    pub members: Vec<usize>,
}

impl NodeSetDoc {
    pub const FORMAT: &'static str = "pcap.node_set";

    pub fn new(domain: &GridDomain, set: &NodeSet) -> Result<Self> {
        domain.check_set(set)?;
        Ok(NodeSetDoc {
            format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION,
            domain: hex_id(domain),
            members: set.members().to_vec(),
        })
    }

    pub fn to_set(&self, domain: &GridDomain) -> Result<NodeSet> {
        expect_header(&self.format, self.version, Self::FORMAT)?;
        check_id(domain, &self.domain)?;
        if self.members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format { what: "node set", message: "members must be strictly increasing".into() });
        }
        NodeSet::from_indices(domain, self.members.clone())
    }
}

/// Nodal values keyed by grid index, in closure order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDoc {
    pub format: String,
    pub version: u32,
    pub domain: String,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl FieldDoc {
    pub const FORMAT: &'static str = "pcap.field";

    pub fn new(domain: &GridDomain, u: &GridFunction) -> Result<Self> {
        u.check_on(domain)?;
        Ok(FieldDoc {
            format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION,
            domain: hex_id(domain),
            nodes: domain.closure_nodes().to_vec(),
            values: u.values().to_vec(),
        })
    }

    pub fn to_field(&self, domain: &GridDomain) -> Result<GridFunction> {
        expect_header(&self.format, self.version, Self::FORMAT)?;
        check_id(domain, &self.domain)?;
        if self.nodes != domain.closure_nodes() {
            return Err(Error::Format { what: "field", message: "node list differs from the domain closure".into() });
        }
        GridFunction::new(domain, self.values.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDoc {
    pub format: String,
    pub version: u32,
    pub domain: String,
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub total_mass: f64,
}

impl MeasureDoc {
    pub const FORMAT: &'static str = "pcap.measure";

    pub fn new(domain: &GridDomain, mu: &DiscreteMeasure) -> Result<Self> {
        if mu.domain() != domain.id() {
            return Err(Error::DomainMismatch);
        }
        Ok(MeasureDoc {
            format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION,
            domain: hex_id(domain),
            nodes: domain.closure_nodes().to_vec(),
            weights: mu.weights().to_vec(),
            total_mass: mu.total_mass(),
        })
    }

    pub fn to_measure(&self, domain: &GridDomain) -> Result<DiscreteMeasure> {
        expect_header(&self.format, self.version, Self::FORMAT)?;
        check_id(domain, &self.domain)?;
        if self.nodes != domain.closure_nodes() {
            return Err(Error::Format { what: "measure", message: "node list differs from the domain closure".into() });
        }
        DiscreteMeasure::new(domain, self.weights.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityDoc {
    pub format: String,
    pub version: u32,
    pub domain: String,
    pub p: f64,
    pub algorithm: Algorithm,
    pub value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub set: Vec<usize>,
    pub active_set: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub extremal: FieldDoc,
}

impl CapacityDoc {
    pub const FORMAT: &'static str = "pcap.capacity";

    pub fn new(domain: &GridDomain, set: &NodeSet, r: &CapacityResult) -> Result<Self> {
        domain.check_set(set)?;
        Ok(CapacityDoc {
            format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION,
            domain: hex_id(domain),
            p: r.p.value(),
            algorithm: r.algorithm,
            value: r.value,
            kkt_residual: r.kkt_residual,
            iterations: r.iterations,
            converged: r.converged,
            set: set.members().to_vec(),
            active_set: r.active_set.members().to_vec(),
            multipliers: r.multipliers.clone(),
            extremal: FieldDoc::new(domain, &r.extremal)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialDoc {
    pub format: String,
    pub version: u32,
    pub domain: String,
    pub p: f64,
    pub objective: f64,
    pub el_residual: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub potential: FieldDoc,
}

impl PotentialDoc {
    pub const FORMAT: &'static str = "pcap.potential";

    pub fn new(domain: &GridDomain, p: f64, r: &PotentialResult) -> Result<Self> {
        Ok(PotentialDoc {
            format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION,
            domain: hex_id(domain),
            p,
            objective: r.objective,
            el_residual: r.el_residual,
            energy: r.energy,
            iterations: r.iterations,
            converged: r.converged,
            potential: FieldDoc::new(domain, &r.potential)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDoc {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub report: PropertyReport,
}

impl ReportDoc {
    pub const FORMAT: &'static str = "pcap.property_report";

    pub fn new(report: PropertyReport) -> Self {
        ReportDoc { format: Self::FORMAT.to_string(),
            version: FORMAT_VERSION, report }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format { what: "json", message: e.to_string() })?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format { what: "json", message: e.to_string() })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format { what: "csv", message: e.to_string() }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format { what: "csv", message: e.to_string() })?;
    String::from_utf8(bytes).map_err(|e| Error::Format { what: "csv", message: e.to_string() })
}

/// Field as CSV: `node,x[,y],value`, one row per closure node.
pub fn field_csv(domain: &GridDomain, u: &GridFunction) -> Result<String> {
    u.check_on(domain)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let two = domain.dimension() == 2;
    let header: &[&str] = if two { &["node", "x", "y", "value"] } else { &["node", "x", "value"] };
    w.write_record(header).map_err(csv_error)?;
    for (pos, &v) in u.values().iter().enumerate() {
        let x = domain.coords(pos);
        let mut row = vec![domain.grid_index(pos).to_string(), x[0].to_string()];
        if two {
            row.push(x[1].to_string());
        }
        row.push(v.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    finish_csv(w)
}

/// Reads the output of [`field_csv`] back; every closure node must appear once.
pub fn read_field_csv(domain: &GridDomain, text: &str) -> Result<GridFunction> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(csv_error)?.clone();
    let value_col = headers.iter().position(|h| h == "value");
    let (Some(0), Some(vc)) = (headers.iter().position(|h| h == "node"), value_col) else {
        return Err(Error::Format { what: "field csv", message: "expected columns node,...,value".into() });
    };
    let rows = parse_pairs(domain, &mut r, vc, "field csv")?;
    GridFunction::new(domain, rows)
}

/// Measure as CSV: `node,weight`, one row per closure node.
pub fn measure_csv(domain: &GridDomain, mu: &DiscreteMeasure) -> Result<String> {
    if mu.domain() != domain.id() {
        return Err(Error::DomainMismatch);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node", "weight"]).map_err(csv_error)?;
    for (pos, &m) in mu.weights().iter().enumerate() {
        w.write_record([domain.grid_index(pos).to_string(), m.to_string()]).map_err(csv_error)?;
    }
    finish_csv(w)
}

/// Reads `node,weight` rows; nodes not listed get weight zero.
pub fn read_measure_csv(domain: &GridDomain, text: &str) -> Result<DiscreteMeasure> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(csv_error)?.clone();
    if headers.len() != 2 || &headers[0] != "node" || &headers[1] != "weight" {
        return Err(Error::Format { what: "measure csv", message: "expected header node,weight".into() });
    }
    let mut weights = vec![0.0; domain.len()];
    let mut seen = vec![false; domain.len()];
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let (pos, w) = parse_row(domain, &rec, 1, "measure csv")?;
        if std::mem::replace(&mut seen[pos], true) {
            return Err(Error::Format { what: "measure csv", message: format!("node {} listed twice", &rec[0]) });
        }
        weights[pos] = w;
    }
    DiscreteMeasure::new(domain, weights)
}

fn parse_row(domain: &GridDomain, rec: &csv::StringRecord, col: usize, what: &'static str) -> Result<(usize, f64)> {
    let bad = |m: String| Error::Format { what, message: m };
    let node: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad(format!("bad node index in {rec:?}")))?;
    let value: f64 = rec.get(col).unwrap_or("").parse().map_err(|_| bad(format!("bad number in {rec:?}")))?;
    let pos = domain.position(node).ok_or(Error::OutOfDomain { node })?;
    Ok((pos, value))
}

fn parse_pairs(domain: &GridDomain, r: &mut csv::Reader<&[u8]>, col: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; domain.len()];
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let (pos, v) = parse_row(domain, &rec, col, what)?;
        if !values[pos].is_nan() {
            return Err(Error::Format { what, message: format!("node {} listed twice", &rec[0]) });
        }
        values[pos] = v;
    }
    if let Some(pos) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Format { what, message: format!("node {} missing", domain.grid_index(pos)) });
    }
    Ok(values)
}

/// Per-trial records as CSV.
pub fn trials_csv(report: &PropertyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in &report.records {
        w.serialize(rec).map_err(csv_error)?;
    }
    if report.records.is_empty() {
        w.write_record(["trial", "inputs_hash", "lhs", "rhs", "slack", "allowance", "status"]).map_err(csv_error)?;
    }
    finish_csv(w)
}

/// Writes `bytes` to a temporary sibling of `path`, syncs it and renames it
/// into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
