//! Plain-text parameter dump, for debugging.
//!
//! ```text
//! dnnopt-mlp 1
//! activations <hidden> <output>
//! sizes <in> <h1> ... <out>
//! <one line per weight row, then one bias line, per layer>
//! ```

use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Mlp};
use crate::error::{Error, Result};

const MAGIC: &str = "dnnopt-mlp";
const VERSION: u32 = 1;

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn save_text(net: &Mlp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(
        out,
        "activations {} {}",
        net.hidden_activation().name(),
        net.output_activation().name()
    );
    let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "sizes {}", sizes.join(" "));
    for layer in net.layers() {
        for row in layer.weights.rows() {
            let _ = writeln!(out, "{}", join(row.iter().copied()));
        }
        let _ = writeln!(out, "{}", join(layer.bias.iter().copied()));
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Contract(format!("malformed network dump: {}", msg.into()))
}

fn parse_row(line: Option<&str>, width: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| bad("unexpected end of input"))?;
    let row = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if row.len() != width {
        return Err(bad(format!("expected {width} values, found {}", row.len())));
    }
    Ok(row)
}

pub fn load_text(text: &str) -> Result<Mlp> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty input"))?;
    match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        [MAGIC, v] if v.parse() == Ok(VERSION) => {}
        _ => return Err(bad(format!("unsupported header `{header}`"))),
    }
    let acts: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing activations"))?
        .split_whitespace()
        .collect();
    let (hidden, output) = match acts.as_slice() {
        ["activations", h, o] => (
            Activation::from_name(h).ok_or_else(|| bad(format!("unknown activation `{h}`")))?,
            Activation::from_name(o).ok_or_else(|| bad(format!("unknown activation `{o}`")))?,
        ),
        _ => return Err(bad("bad activations line")),
    };
    let sizes_line = lines.next().ok_or_else(|| bad("missing sizes"))?;
    let mut tokens = sizes_line.split_whitespace();
    if tokens.next() != Some("sizes") {
        return Err(bad("bad sizes line"));
    }
    let sizes = tokens
        .map(|t| t.parse::<usize>().map_err(|e| bad(format!("`{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if sizes.len() < 2 {
        return Err(bad("need at least two layer sizes"));
    }
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut flat = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in {
            flat.extend(parse_row(lines.next(), fan_out)?);
        }
        let bias = parse_row(lines.next(), fan_out)?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((fan_in, fan_out), flat).expect("sized"),
            bias: Array1::from(bias),
        });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing data"));
    }
    Mlp::from_layers(layers, hidden, output)
}
