//! Line-oriented text dump of a pose graph.
//!
//! ```text
//! # cslam pose graph v1
//! GRAPH <owner> <max_nodes>
//! NODE <id> <x> <y> <psi> <timestamp> <is_scan 0|1>
//! ODOM <from> <to> <x> <y> <psi> <wx> <wy> <wpsi>
//! INTRA <from> <to> <x> <y> <psi> <wx> <wy> <wpsi>
//! INTER <from> <to> <x> <y> <psi> <wx> <wy> <wpsi> <src_drone> <src_pose> <sx> <sy> <spsi> <icp_x> <icp_y> <icp_psi>
//! ```
//!
//! Floats are written in shortest round-trip form, so load(dump(g)) == g.

use std::fmt::Write as _;

use thiserror::Error;

use super::{InterLink, LoopEdge, LoopKind, OdomEdge, PoseGraph, PoseNode};
use crate::geometry::{InfoMatrix3, Pose2};

#[derive(Debug, Error, PartialEq)]
pub enum GraphParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("empty graph dump")]
    Empty,
}

fn fmt_pose(out: &mut String, p: &Pose2) {
    let _ = write!(out, " {} {} {}", p.x, p.y, p.psi);
}

fn fmt_info(out: &mut String, w: &InfoMatrix3) {
    let _ = write!(out, " {} {} {}", w.diag[0], w.diag[1], w.diag[2]);
}

pub fn dump_graph(graph: &PoseGraph) -> String {
    let mut out = String::from("# cslam pose graph v1\n");
    let _ = writeln!(out, "GRAPH {} {}", graph.owner(), graph.max_nodes());
    for n in graph.nodes() {
        let _ = write!(out, "NODE {}", n.id);
        fmt_pose(&mut out, &n.pose);
        let _ = writeln!(out, " {} {}", n.timestamp, u8::from(n.is_scan_pose));
    }
    for e in graph.odometry_edges() {
        let _ = write!(out, "ODOM {} {}", e.from, e.to);
        fmt_pose(&mut out, &e.measurement);
        fmt_info(&mut out, &e.info);
        out.push('\n');
    }
    for e in graph.loop_edges() {
        let tag = if e.is_inter() { "INTER" } else { "INTRA" };
        let _ = write!(out, "{tag} {} {}", e.from, e.to);
        fmt_pose(&mut out, &e.measurement);
        fmt_info(&mut out, &e.info);
        if let LoopKind::Inter(link) = &e.kind {
            let _ = write!(out, " {} {}", link.source_drone, link.source_pose_id);
            fmt_pose(&mut out, &link.source_pose_snapshot);
            fmt_pose(&mut out, &link.icp_transform);
        }
        out.push('\n');
    }
    out
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl Fields<'_> {
    fn err(&self, msg: impl Into<String>) -> GraphParseError {
        GraphParseError::Line {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, GraphParseError> {
        let tok = self.it.next().ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.err(format!("invalid {what} '{tok}'")))
    }

    fn pose(&mut self) -> Result<Pose2, GraphParseError> {
        let p = Pose2 {
            x: self.next("x")?,
            y: self.next("y")?,
            psi: self.next("psi")?,
        };
        if !p.is_finite() {
            return Err(self.err("non-finite pose"));
        }
        Ok(p)
    }

    fn info(&mut self) -> Result<InfoMatrix3, GraphParseError> {
        let (a, b, c) = (self.next("wx")?, self.next("wy")?, self.next("wpsi")?);
        InfoMatrix3::new(a, b, c).ok_or_else(|| self.err("information weights must be positive"))
    }

    fn done(mut self) -> Result<(), GraphParseError> {
        match self.it.next() {
            Some(tok) => Err(self.err(format!("unexpected trailing field '{tok}'"))),
            None => Ok(()),
        }
    }
}

pub fn load_graph(text: &str) -> Result<PoseGraph, GraphParseError> {
    let mut header: Option<(u16, usize)> = None;
    let mut nodes = Vec::new();
    let mut odom = Vec::new();
    let mut loops = Vec::new();
    let mut edge_lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut it = raw.split_whitespace();
        let tag = it.next().unwrap_or_default();
        let mut f = Fields { line, it };
        match tag {
            "GRAPH" => {
                header = Some((f.next("owner")?, f.next("max_nodes")?));
                f.done()?;
            }
            "NODE" => {
                let id: u32 = f.next("node id")?;
                if id as usize != nodes.len() {
                    return Err(f.err(format!("node ids must be contiguous, expected {}", nodes.len())));
                }
                let pose = f.pose()?;
                let timestamp = f.next("timestamp")?;
                let scan: u8 = f.next("scan flag")?;
                f.done()?;
                nodes.push(PoseNode {
                    id,
                    pose,
                    is_scan_pose: scan != 0,
                    timestamp,
                });
            }
            "ODOM" => {
                let (from, to): (u32, u32) = (f.next("from")?, f.next("to")?);
                if to != from + 1 {
                    return Err(f.err("odometry edge must connect consecutive nodes"));
                }
                let measurement = f.pose()?;
                let info = f.info()?;
                f.done()?;
                edge_lines.push((line, from, to));
                odom.push(OdomEdge {
                    from,
                    to,
                    measurement,
                    info,
                });
            }
            "INTRA" | "INTER" => {
                let (from, to): (u32, u32) = (f.next("from")?, f.next("to")?);
                let measurement = f.pose()?;
                let info = f.info()?;
                let kind = if tag == "INTER" {
                    let source_drone = f.next("source drone")?;
                    let source_pose_id = f.next("source pose")?;
                    let source_pose_snapshot = f.pose()?;
                    let icp_transform = f.pose()?;
                    LoopKind::Inter(InterLink {
                        source_drone,
                        source_pose_id,
                        source_pose_snapshot,
                        icp_transform,
                    })
                } else {
                    LoopKind::Intra
                };
                f.done()?;
                edge_lines.push((line, from, to));
                loops.push(LoopEdge {
                    from,
                    to,
                    measurement,
                    info,
                    kind,
                });
            }
            other => return Err(f.err(format!("unknown record '{other}'"))),
        }
    }

    if nodes.is_empty() {
        return Err(GraphParseError::Empty);
    }
    for (line, from, to) in edge_lines {
        if from as usize >= nodes.len() || to as usize >= nodes.len() {
            return Err(GraphParseError::Line {
                line,
                msg: format!("edge {from}->{to} references a missing node"),
            });
        }
    }
    let (owner, max_nodes) = header.unwrap_or((0, nodes.len().max(3000)));
    let mut graph = PoseGraph::new(owner, nodes[0].pose, nodes[0].timestamp, max_nodes);
    graph.push_raw(nodes, odom, loops);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_dump_is_an_error() {
        assert_eq!(load_graph(""), Err(GraphParseError::Empty));
        assert_eq!(load_graph("# nothing\n"), Err(GraphParseError::Empty));
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "GRAPH 0 10\nNODE 0 0 0 0 0 0\nNODE 1 1 0 x 0 0\n";
        match load_graph(text) {
            Err(GraphParseError::Line { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "NODE 0 0 0 0 0 0\nODOM 0 1 1 0 0 1 1 1\n";
        assert!(matches!(load_graph(text), Err(GraphParseError::Line { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn dump_load_round_trip(steps in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -0.5..0.5f64), 1..40), seed in 0u32..1000) {
            let mut g = PoseGraph::new(3, Pose2::new(0.5, -0.25, 0.1), 0.0, 100);
            for (k, (x, y, p)) in steps.iter().enumerate() {
                g.add_pose_with_odometry(Pose2::new(*x, *y, *p), InfoMatrix3::new(50.0, 50.0, 100.0).unwrap(), k as f64 * 0.1).unwrap();
            }
            let last = g.last().id;
            g.mark_scan_pose(last).unwrap();
            g.add_inter_loop_edge(last, Pose2::new(0.01, 0.02, 0.003 * seed as f64), 1, seed, Pose2::new(1.0, 2.0, 0.3), InfoMatrix3::new(200.0, 200.0, 400.0).unwrap()).unwrap();
            let back = load_graph(&dump_graph(&g)).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
