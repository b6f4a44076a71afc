//! Static parameter and flop accounting.
//!
//! One multiply-accumulate counts as one flop. Per layer:
//!
//! - convolution: `out_elems · (C_in/groups) · kh · kw`, plus `out_elems` with bias
//! - linear: `in · out + out`
//! - batch-norm (inference): 2 per element; LeakyReLU and add: 1 per element
//! - max-pool: `k² − 1` per output element; average pools: 1 per input element
//! - octave convolution: the sum of its paths, plus the average pools feeding
//!   the high→low path and stride-2 layers, plus one add per merged element;
//!   nearest upsampling is free

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::graph::{Layer, ModelGraph};
use crate::octave::{OctavePair, OctavePath, OctaveSpec};
use crate::tensor::{Element, Shape};

pub const CONVENTION: &str = "mac=1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub layer: String,
    pub output_shape: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub convention: String,
    pub input_size: (usize, usize),
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl CostReport {
    pub fn empty(input_size: (usize, usize)) -> Self {
        Self {
            convention: CONVENTION.into(),
            input_size,
            rows: Vec::new(),
            total_params: 0,
            total_flops: 0,
        }
    }

    pub fn push(&mut self, row: CostRow) {
        self.total_params += row.params;
        self.total_flops += row.flops;
        self.rows.push(row);
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("cost report json: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

fn elems(p: &OctavePair<Shape>) -> u64 {
    (p.high.numel() + p.low.map_or(0, |l| l.numel())) as u64
}

fn pair_label(p: &OctavePair<Shape>) -> String {
    match p.low {
        Some(l) => format!("{}+{}", p.high, l),
        None => p.high.to_string(),
    }
}

/// Flops of one octave (or plain) convolution given its input pair shapes.
pub fn conv_flops(spec: &OctaveSpec, input: &OctavePair<Shape>) -> Result<u64> {
    let per_out = |s: &crate::nn::ConvSpec| (s.in_per_group() * s.kernel.0 * s.kernel.1) as u64;
    if spec.is_vanilla() {
        let out = spec.base.output_shape(input.high)?;
        let mut f = out.numel() as u64 * per_out(&spec.base);
        if spec.base.bias {
            f += out.numel() as u64;
        }
        return Ok(f);
    }
    let mut flops = 0u64;
    let mut high = input.high;
    let mut low = input.low;
    if spec.pre_pools() {
        flops += elems(input);
        let pool = crate::nn::PoolSpec::HALVE;
        high = pool.output_shape(high)?;
        low = low.map(|l| pool.output_shape(l)).transpose()?;
    }
    let low_res = |c: usize| Shape::new(high.n, c, high.h / 2, high.w / 2);
    let mut hi_terms = 0;
    let mut lo_terms = 0;
    for path in OctavePath::ALL {
        let Some(s) = spec.path_spec(path) else { continue };
        let out = match path {
            OctavePath::HighToHigh => {
                hi_terms += 1;
                Shape::new(high.n, s.out_channels, high.h, high.w)
            }
            OctavePath::LowToHigh => {
                hi_terms += 1;
                low.ok_or_else(|| Error::Octave("low→high path without a low input".into()))?;
                low_res(s.out_channels)
            }
            OctavePath::HighToLow => {
                lo_terms += 1;
                flops += high.numel() as u64;
                low_res(s.out_channels)
            }
            OctavePath::LowToLow => {
                lo_terms += 1;
                low_res(s.out_channels)
            }
        };
        flops += out.numel() as u64 * per_out(&s);
    }
    let (hi_out, lo_out) = spec.out_split();
    if hi_terms == 2 {
        flops += (high.plane() * hi_out * high.n) as u64;
    }
    if lo_terms == 2 {
        flops += low_res(lo_out).numel() as u64;
    }
    Ok(flops)
}

/// Per-layer parameter and flop counts for a single image of `input_size`.
pub fn analyze<T: Element>(model: &ModelGraph<T>, input_size: (usize, usize)) -> Result<CostReport> {
    if input_size.0 == 0 || input_size.1 == 0 {
        return Err(Error::InvalidShape("input size must be positive".into()));
    }
    let shapes = model.node_shapes(Shape::new(1, 3, input_size.0, input_size.1))?;
    let mut report = CostReport::empty(input_size);
    let params = model.params();
    for (i, node) in model.nodes().iter().enumerate() {
        let out = &shapes[i];
        let arg = |k: usize| &shapes[node.inputs[k]];
        let (p, f): (usize, u64) = match &node.layer {
            Layer::Input => continue,
            Layer::Conv { spec, weights } => {
                let p = OctavePath::ALL
                    .iter()
                    .filter_map(|&path| weights.get(path))
                    .map(|&id| params.get(id).len())
                    .sum();
                (p, conv_flops(spec, arg(0))?)
            }
            Layer::BatchNorm { branches } => {
                let p = branches
                    .iter()
                    .map(|b| params.get(b.gamma).len() + params.get(b.beta).len())
                    .sum();
                (p, 2 * elems(out))
            }
            Layer::LeakyRelu { .. } | Layer::Add => (0, elems(out)),
            Layer::MaxPool { spec } => (0, (spec.kernel * spec.kernel - 1) as u64 * elems(out)),
            Layer::GlobalAvgPool => (0, elems(arg(0))),
            Layer::Linear {
                in_features,
                out_features,
                weight,
                bias,
            } => (
                params.get(*weight).len() + params.get(*bias).len(),
                (in_features * out_features + out_features) as u64,
            ),
        };
        report.push(CostRow {
            layer: node.name.clone(),
            output_shape: pair_label(out),
            params: p as u64,
            flops: f,
        });
    }
    Ok(report)
}

pub fn emit_report(report: &CostReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut write = |r: [&str; 4]| w.write_record(r).expect("in-memory csv write");
            write(["layer", "output_shape", "params", "flops"]);
            for row in &report.rows {
                write([
                    &row.layer,
                    &row.output_shape,
                    &row.params.to_string(),
                    &row.flops.to_string(),
                ]);
            }
            write([
                "total",
                "",
                &report.total_params.to_string(),
                &report.total_flops.to_string(),
            ]);
            String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is UTF-8")
        }
        ReportFormat::Table => {
            let width = report.rows.iter().map(|r| r.layer.len()).max().unwrap_or(0).max(5);
            let shape_w = report
                .rows
                .iter()
                .map(|r| r.output_shape.len())
                .max()
                .unwrap_or(0)
                .max(12);
            let mut s = String::new();
            let _ = writeln!(
                s,
                "# input {}x{}, convention {}",
                report.input_size.0, report.input_size.1, report.convention
            );
            let _ = writeln!(
                s,
                "{:<width$}  {:<shape_w$}  {:>10}  {:>12}",
                "layer", "output_shape", "params", "flops"
            );
            for r in &report.rows {
                let _ = writeln!(
                    s,
                    "{:<width$}  {:<shape_w$}  {:>10}  {:>12}",
                    r.layer, r.output_shape, r.params, r.flops
                );
            }
            let _ = writeln!(
                s,
                "{:<width$}  {:<shape_w$}  {:>10}  {:>12}",
                "total", "", report.total_params, report.total_flops
            );
            s
        }
    }
}
