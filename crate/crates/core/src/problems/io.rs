//! Versioned JSON instance format.
//!
//! Fields are written in a fixed order and every float carries 17
//! significant digits, so a write/read cycle reproduces the instance bit for
//! bit. An unbounded latest time is written as `null`.

use super::{Node, ProblemError, ProblemInstance, Variant};
use serde::Deserialize;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

pub const FORMAT_VERSION: u32 = 1;

fn push_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

pub fn instance_to_json(inst: &ProblemInstance) -> String {
    let mut s = String::with_capacity(128 + 160 * inst.nodes.len());
    write!(s, "{{\"version\":{FORMAT_VERSION},\"variant\":\"{}\",\"scale\":", inst.variant.name()).unwrap();
    push_f64(&mut s, inst.scale);
    if let Some(q) = inst.capacity {
        s.push_str(",\"capacity\":");
        push_f64(&mut s, q);
    }
    if let Some(k) = inst.fleet_limit {
        write!(s, ",\"fleet_limit\":{k}").unwrap();
    }
    s.push_str(",\"nodes\":[");
    for (i, n) in inst.nodes.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"x\":");
        push_f64(&mut s, n.x);
        s.push_str(",\"y\":");
        push_f64(&mut s, n.y);
        s.push_str(",\"demand\":");
        push_f64(&mut s, n.demand);
        s.push_str(",\"e\":");
        push_f64(&mut s, n.tw_early);
        s.push_str(",\"l\":");
        if n.tw_late.is_finite() {
            push_f64(&mut s, n.tw_late);
        } else {
            s.push_str("null");
        }
        s.push_str(",\"service\":");
        push_f64(&mut s, n.service);
        if let Some(d) = n.draft {
            s.push_str(",\"draft\":");
            push_f64(&mut s, d);
        }
        s.push('}');
    }
    s.push(']');
    if let Some(w) = &inst.witness {
        s.push_str(",\"witness\":[");
        for (i, v) in w.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push(']');
    }
    s.push('}');
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNode {
    x: f64,
    y: f64,
    demand: f64,
    e: f64,
    l: Option<f64>,
    service: f64,
    #[serde(default)]
    draft: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireInstance {
    version: u32,
    variant: Variant,
    scale: f64,
    #[serde(default)]
    capacity: Option<f64>,
    #[serde(default)]
    fleet_limit: Option<u32>,
    nodes: Vec<WireNode>,
    #[serde(default)]
    witness: Option<Vec<usize>>,
}

pub fn instance_from_json(text: &str) -> Result<ProblemInstance, ProblemError> {
    let wire: WireInstance = serde_json::from_str(text).map_err(|e| ProblemError::Format(e.to_string()))?;
    if wire.version != FORMAT_VERSION {
        return Err(ProblemError::Format(format!(
            "unsupported instance version {} (expected {FORMAT_VERSION})",
            wire.version
        )));
    }
    let nodes = wire
        .nodes
        .into_iter()
        .map(|n| Node {
            x: n.x,
            y: n.y,
            demand: n.demand,
            tw_early: n.e,
            tw_late: n.l.unwrap_or(f64::INFINITY),
            service: n.service,
            draft: n.draft,
        })
        .collect();
    let inst = ProblemInstance {
        variant: wire.variant,
        nodes,
        capacity: wire.capacity,
        fleet_limit: wire.fleet_limit,
        scale: wire.scale,
        witness: wire.witness,
    };
    inst.validate()?;
    Ok(inst)
}

pub fn write_jsonl<W: Write>(mut out: W, instances: &[ProblemInstance]) -> std::io::Result<()> {
    for inst in instances {
        writeln!(out, "{}", instance_to_json(inst))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ProblemInstance>, ProblemError> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ProblemError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = instance_from_json(&line)
            .map_err(|e| ProblemError::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProblemInstance {
        let mut inst = ProblemInstance::new(
            Variant::Cvrptwlv,
            vec![
                Node::at(0.5, 0.5).with_window(0.0, 3.25),
                Node::at(0.1, 0.7).with_window(0.2, 0.9).with_demand(3.0),
                Node::at(1.0 / 3.0, 0.0).with_window(0.0, f64::INFINITY).with_demand(7.0),
            ],
            Some(40.0),
            Some(1),
        )
        .unwrap();
        inst.witness = Some(vec![0, 1, 2, 0]);
        inst
    }

    #[test]
    fn field_order_is_fixed() {
        let text = instance_to_json(&sample());
        let keys = ["\"version\"", "\"variant\"", "\"scale\"", "\"capacity\"", "\"fleet_limit\"", "\"nodes\"", "\"witness\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert!(text.contains("\"x\":3.3333333333333331e-1"), "{text}");
        assert!(text.contains("\"l\":null"));
    }

    #[test]
    fn round_trip_is_exact() {
        let inst = sample();
        let back = instance_from_json(&instance_to_json(&inst)).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn wrong_version_rejected() {
        let text = instance_to_json(&sample()).replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(instance_from_json(&text), Err(ProblemError::Format(_))));
    }
}
