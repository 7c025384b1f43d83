//! A small op graph with anchor-driven layout propagation.
//!
//! Text format, one statement per line:
//!
//! ```text
//! %0 = input() shape=[16,16]
//! %1 = trans(%0) perm=[1,0] shape=[16,16]
//! %2 = add(%0, %1) shape=[16,16]
//! anchor %2 acc
//! ```
//!
//! Node ids are sequential from zero and every argument must be defined on an
//! earlier line. `input` introduces a value; `trans`, `reshape`, `join`,
//! `split`, `expand_dims` and `broadcast` are the shape ops (reshape and
//! broadcast read their target from `shape=`, `trans` takes `perm=[..]`,
//! `expand_dims` takes `axis=N`); any other op name is treated as an
//! elementwise op over same-shaped operands. A `split` node stands for either
//! half of the pair, which always share a layout. Anchors bind a named layout
//! to a value; propagation spreads those layouts to every other value.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::layout::LinearLayout;
use crate::shapeops::{canonicalize, layout_shape, Shape, ShapeOp, ShapeOpError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("node %{node}: {source}")]
    Shape { node: usize, source: ShapeOpError },
    #[error("node %{node}: expected {expected} arguments, got {got}")]
    Arity { node: usize, expected: usize, got: usize },
    #[error("anchor layout {name:?} is not bound")]
    UnboundAnchor { name: String },
    #[error("node %{node} has conflicting anchors")]
    DuplicateAnchor { node: usize },
    #[error("anchor {name:?} does not fit node %{node}: expected shape {expected}, got {got}")]
    AnchorShape { node: usize, name: String, expected: Shape, got: Shape },
    #[error("values {ids:?} are unreachable from any anchor")]
    Unreachable { ids: Vec<usize> },
    #[error("node %{node}: operand %{arg} cannot take the required layout: {source}")]
    Inconsistent { node: usize, arg: usize, source: ShapeOpError },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Shape(ShapeOp),
    Elementwise(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub args: Vec<usize>,
    pub shape: Shape,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpGraph {
    pub nodes: Vec<Node>,
    /// (node id, layout name) pairs in source order.
    pub anchors: Vec<(usize, String)>,
}

/// One operand that must change layout before its user runs. `value == user`
/// marks a result conversion: the node computes in `from` and hands `to` to
/// its consumers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversion {
    pub value: usize,
    pub user: usize,
    pub from: LinearLayout,
    pub to: LinearLayout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Propagation {
    /// Layout per node id.
    pub layouts: Vec<LinearLayout>,
    /// Conversions that remain after rematerialization.
    pub conversions: Vec<Conversion>,
    /// Conversions removed by recomputing a cheap producer chain in the
    /// target layout.
    pub rematerialized: Vec<Conversion>,
}

#[derive(Serialize)]
pub struct PropagationReport {
    pub version: u32,
    pub values: Vec<ValueReport>,
    pub conversions: Vec<ConversionReport>,
    pub rematerialized: Vec<ConversionReport>,
}

#[derive(Serialize)]
pub struct ValueReport {
    pub id: usize,
    pub shape: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    pub layout: String,
}

#[derive(Serialize)]
pub struct ConversionReport {
    pub value: usize,
    pub user: usize,
    pub from: String,
    pub to: String,
}

impl OpGraph {
    pub fn parse(text: &str) -> Result<OpGraph, GraphError> {
        let mut g = OpGraph::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| GraphError::Parse { line, msg };
            let stmt = raw.split('#').next().unwrap_or("").trim();
            if stmt.is_empty() {
                continue;
            }
            if let Some(rest) = stmt.strip_prefix("anchor ") {
                let mut parts = rest.split_whitespace();
                let id = parse_ref(parts.next().unwrap_or(""), line)?;
                let name = parts
                    .next()
                    .ok_or_else(|| err("anchor needs a layout name".into()))?
                    .to_string();
                if parts.next().is_some() {
                    return Err(err("trailing tokens after anchor".into()));
                }
                if id >= g.nodes.len() {
                    return Err(err(format!("anchor references undefined %{id}")));
                }
                if g.anchors.iter().any(|(n, _)| *n == id) {
                    return Err(GraphError::DuplicateAnchor { node: id });
                }
                g.anchors.push((id, name));
                continue;
            }
            let (lhs, rhs) =
                stmt.split_once('=').ok_or_else(|| err("expected `%id = op(...)`".into()))?;
            let id = parse_ref(lhs.trim(), line)?;
            if id != g.nodes.len() {
                return Err(err(format!("expected node id %{}, got %{id}", g.nodes.len())));
            }
            let rhs = rhs.trim();
            let open = rhs.find('(').ok_or_else(|| err("missing argument list".into()))?;
            let close =
                rhs.find(')').ok_or_else(|| err("missing closing parenthesis".into()))?;
            let op_name = rhs[..open].trim();
            let mut args = Vec::new();
            for tok in rhs[open + 1..close].split(',') {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                let a = parse_ref(tok, line)?;
                if a >= id {
                    return Err(err(format!("argument %{a} is not defined before %{id}")));
                }
                args.push(a);
            }
            let mut attrs = HashMap::new();
            for tok in rhs[close + 1..].split_whitespace() {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got {tok:?}")))?;
                attrs.insert(k.to_string(), v.to_string());
            }
            let shape = parse_shape(
                attrs.remove("shape").ok_or_else(|| err("missing shape=".into()))?.as_str(),
                line,
            )?;
            let kind = match op_name {
                "input" => NodeKind::Input,
                "trans" => NodeKind::Shape(ShapeOp::Trans {
                    perm: parse_list(
                        attrs.remove("perm").ok_or_else(|| err("trans needs perm=".into()))?.as_str(),
                        line,
                    )?,
                }),
                "reshape" => NodeKind::Shape(ShapeOp::Reshape { shape: shape.clone() }),
                "join" => NodeKind::Shape(ShapeOp::Join),
                "split" => NodeKind::Shape(ShapeOp::Split),
                "expand_dims" => NodeKind::Shape(ShapeOp::ExpandDims {
                    axis: attrs
                        .remove("axis")
                        .ok_or_else(|| err("expand_dims needs axis=".into()))?
                        .parse()
                        .map_err(|_| err("axis must be an integer".into()))?,
                }),
                "broadcast" => NodeKind::Shape(ShapeOp::Broadcast { shape: shape.clone() }),
                other => NodeKind::Elementwise(other.to_string()),
            };
            if !attrs.is_empty() {
                let mut keys: Vec<_> = attrs.into_keys().collect();
                keys.sort();
                return Err(err(format!("unknown attributes {keys:?}")));
            }
            let node = Node { id, kind, args, shape };
            check_node(&node, &g.nodes)?;
            g.nodes.push(node);
        }
        Ok(g)
    }

    #[must_use]
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let args: Vec<String> = n.args.iter().map(|a| format!("%{a}")).collect();
            let (name, attr) = match &n.kind {
                NodeKind::Input => ("input".to_string(), String::new()),
                NodeKind::Shape(ShapeOp::Trans { perm }) => {
                    ("trans".to_string(), format!(" perm={}", fmt_list(perm)))
                }
                NodeKind::Shape(ShapeOp::Reshape { .. }) => ("reshape".to_string(), String::new()),
                NodeKind::Shape(ShapeOp::Join) => ("join".to_string(), String::new()),
                NodeKind::Shape(ShapeOp::Split) => ("split".to_string(), String::new()),
                NodeKind::Shape(ShapeOp::ExpandDims { axis }) => {
                    ("expand_dims".to_string(), format!(" axis={axis}"))
                }
                NodeKind::Shape(ShapeOp::Broadcast { .. }) => {
                    ("broadcast".to_string(), String::new())
                }
                NodeKind::Elementwise(op) => (op.clone(), String::new()),
            };
            let _ = writeln!(
                out,
                "%{} = {name}({}){attr} shape={}",
                n.id,
                args.join(", "),
                n.shape
            );
        }
        for (id, name) in &self.anchors {
            let _ = writeln!(out, "anchor %{id} {name}");
        }
        out
    }

    /// Assign a layout to every value, spreading the bound anchor layouts
    /// forward and backward until nothing changes, then collect the operand
    /// conversions the assignment still requires.
    pub fn propagate(
        &self,
        bindings: &HashMap<String, LinearLayout>,
    ) -> Result<Propagation, GraphError> {
        let n = self.nodes.len();
        let mut layouts: Vec<Option<LinearLayout>> = vec![None; n];
        for (id, name) in &self.anchors {
            let l = bindings
                .get(name)
                .ok_or_else(|| GraphError::UnboundAnchor { name: name.clone() })?;
            let l = canonicalize(l)
                .map_err(|source| GraphError::Shape { node: *id, source })?;
            let got = layout_shape(&l).expect("canonical layout has a shape");
            if got != self.nodes[*id].shape {
                return Err(GraphError::AnchorShape {
                    node: *id,
                    name: name.clone(),
                    expected: self.nodes[*id].shape.clone(),
                    got,
                });
            }
            layouts[*id] = Some(l);
        }

        loop {
            let mut changed = false;
            // Forward: derive a node's layout from its operands.
            for node in &self.nodes {
                if layouts[node.id].is_some() {
                    continue;
                }
                let derived = match &node.kind {
                    NodeKind::Input => None,
                    NodeKind::Shape(op) => {
                        self.pick_winner(node, &layouts).and_then(|w| op.forward(&w).ok())
                    }
                    NodeKind::Elementwise(_) => self.pick_winner(node, &layouts),
                };
                if derived.is_some() {
                    layouts[node.id] = derived;
                    changed = true;
                }
            }
            // Backward: derive operand layouts from their user.
            for node in self.nodes.iter().rev() {
                let Some(l_out) = layouts[node.id].clone() else { continue };
                for &a in &node.args {
                    if layouts[a].is_some() {
                        continue;
                    }
                    let derived = match &node.kind {
                        NodeKind::Input => None,
                        NodeKind::Shape(op) => {
                            op.backward(&self.nodes[a].shape, &l_out).ok()
                        }
                        NodeKind::Elementwise(_) => Some(l_out.clone()),
                    };
                    if derived.is_some() {
                        layouts[a] = derived;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let unreachable: Vec<usize> =
            (0..n).filter(|&i| layouts[i].is_none()).collect();
        if !unreachable.is_empty() {
            return Err(GraphError::Unreachable { ids: unreachable });
        }
        let layouts: Vec<LinearLayout> = layouts.into_iter().map(Option::unwrap).collect();

        let mut conversions = Vec::new();
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Input => {}
                NodeKind::Elementwise(_) => {
                    for &a in &node.args {
                        if layouts[a] != layouts[node.id] {
                            conversions.push(Conversion {
                                value: a,
                                user: node.id,
                                from: layouts[a].clone(),
                                to: layouts[node.id].clone(),
                            });
                        }
                    }
                }
                NodeKind::Shape(op) => {
                    // An edge is consistent if either transfer direction
                    // links the two layouts; backward-derived operands may
                    // fail the forward comparison (broadcast can rebuild its
                    // spare columns in a different order) yet still move no
                    // data.
                    for &a in &node.args {
                        let fwd = op.forward(&layouts[a]);
                        if fwd.as_ref().is_ok_and(|f| *f == layouts[node.id]) {
                            continue;
                        }
                        match op.backward(&self.nodes[a].shape, &layouts[node.id]) {
                            Ok(required) if required == layouts[a] => {}
                            Ok(required) => conversions.push(Conversion {
                                value: a,
                                user: node.id,
                                from: layouts[a].clone(),
                                to: required,
                            }),
                            Err(_) => {
                                // The operand layout cannot be adjusted (the
                                // result layout is outside the op's image),
                                // so the node computes forward and converts
                                // its own result.
                                let from = fwd.map_err(|source| GraphError::Inconsistent {
                                    node: node.id,
                                    arg: a,
                                    source,
                                })?;
                                conversions.push(Conversion {
                                    value: node.id,
                                    user: node.id,
                                    from,
                                    to: layouts[node.id].clone(),
                                });
                            }
                        }
                    }
                }
            }
        }

        let mut prop = Propagation { layouts, conversions, rematerialized: Vec::new() };
        self.rematerialize(&mut prop);
        Ok(prop)
    }

    /// Preferred operand layout for a multi-input node: highest contiguity,
    /// ties broken by lowest operand id.
    fn pick_winner(
        &self,
        node: &Node,
        layouts: &[Option<LinearLayout>],
    ) -> Option<LinearLayout> {
        let mut best: Option<(usize, usize, &LinearLayout)> = None;
        for &a in &node.args {
            let Some(l) = layouts[a].as_ref() else { continue };
            let contig = l.contiguous_log2().unwrap_or(0);
            let better = match best {
                None => true,
                Some((bc, ba, _)) => contig > bc || (contig == bc && a < ba),
            };
            if better {
                best = Some((contig, a, l));
            }
        }
        best.map(|(_, _, l)| l.clone())
    }

    /// Drop conversions whose source value is produced by a cheap chain of
    /// shape and elementwise ops rooted only at unanchored inputs; the user
    /// can recompute that chain in the target layout instead of converting.
    /// Anchored values pin their layout, so any anchor in the chain keeps the
    /// conversion.
    fn rematerialize(&self, prop: &mut Propagation) {
        let anchored: Vec<bool> = {
            let mut v = vec![false; self.nodes.len()];
            for (id, _) in &self.anchors {
                v[*id] = true;
            }
            v
        };
        let mut keep = Vec::new();
        for conv in std::mem::take(&mut prop.conversions) {
            if conv.value != conv.user && self.chain_is_cheap(conv.value, &anchored) {
                prop.rematerialized.push(conv);
            } else {
                keep.push(conv);
            }
        }
        prop.conversions = keep;
    }

    fn chain_is_cheap(&self, id: usize, anchored: &[bool]) -> bool {
        if anchored[id] {
            return false;
        }
        match &self.nodes[id].kind {
            NodeKind::Input => true,
            NodeKind::Shape(_) | NodeKind::Elementwise(_) => {
                self.nodes[id].args.iter().all(|&a| self.chain_is_cheap(a, anchored))
            }
        }
    }
}

impl Propagation {
    #[must_use]
    pub fn report(&self, graph: &OpGraph) -> PropagationReport {
        let anchor_of = |id: usize| {
            graph.anchors.iter().find(|(n, _)| *n == id).map(|(_, name)| name.clone())
        };
        let values = graph
            .nodes
            .iter()
            .map(|n| ValueReport {
                id: n.id,
                shape: n.shape.0.iter().map(|&b| 1u64 << b).collect(),
                anchor: anchor_of(n.id),
                layout: self.layouts[n.id].to_text(&format!("v{}", n.id)),
            })
            .collect();
        let render = |c: &Conversion| ConversionReport {
            value: c.value,
            user: c.user,
            from: c.from.to_text("from"),
            to: c.to.to_text("to"),
        };
        PropagationReport {
            version: 1,
            values,
            conversions: self.conversions.iter().map(render).collect(),
            rematerialized: self.rematerialized.iter().map(render).collect(),
        }
    }
}

fn check_node(node: &Node, prior: &[Node]) -> Result<(), GraphError> {
    let shape_err = |source| GraphError::Shape { node: node.id, source };
    match &node.kind {
        NodeKind::Input => {
            if !node.args.is_empty() {
                return Err(GraphError::Arity { node: node.id, expected: 0, got: node.args.len() });
            }
            Ok(())
        }
        NodeKind::Shape(op) => {
            if node.args.len() != op.arity() {
                return Err(GraphError::Arity {
                    node: node.id,
                    expected: op.arity(),
                    got: node.args.len(),
                });
            }
            let in_shape = &prior[node.args[0]].shape;
            for &a in &node.args[1..] {
                if prior[a].shape != *in_shape {
                    return Err(shape_err(ShapeOpError::ShapeMismatch {
                        expected: in_shape.clone(),
                        got: prior[a].shape.clone(),
                    }));
                }
            }
            let out = op.out_shape(in_shape).map_err(shape_err)?;
            if out != node.shape {
                return Err(shape_err(ShapeOpError::ShapeMismatch {
                    expected: out,
                    got: node.shape.clone(),
                }));
            }
            Ok(())
        }
        NodeKind::Elementwise(_) => {
            for &a in &node.args {
                if prior[a].shape != node.shape {
                    return Err(shape_err(ShapeOpError::ShapeMismatch {
                        expected: node.shape.clone(),
                        got: prior[a].shape.clone(),
                    }));
                }
            }
            Ok(())
        }
    }
}

fn parse_ref(tok: &str, line: usize) -> Result<usize, GraphError> {
    tok.strip_prefix('%')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| GraphError::Parse {
            line,
            msg: format!("expected a value reference like %0, got {tok:?}"),
        })
}

fn parse_shape(tok: &str, line: usize) -> Result<Shape, GraphError> {
    let sizes: Vec<u64> = parse_list(tok, line)?;
    let mut bits = Vec::with_capacity(sizes.len());
    for s in sizes {
        if s == 0 || !s.is_power_of_two() {
            return Err(GraphError::Parse {
                line,
                msg: format!("shape entries must be powers of two, got {s}"),
            });
        }
        bits.push(s.trailing_zeros() as usize);
    }
    Ok(Shape(bits))
}

fn parse_list<T: std::str::FromStr>(tok: &str, line: usize) -> Result<Vec<T>, GraphError> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| GraphError::Parse { line, msg: format!("expected [..], got {tok:?}") })?;
    let mut out = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(part.parse().map_err(|_| GraphError::Parse {
            line,
            msg: format!("bad list entry {part:?}"),
        })?);
    }
    Ok(out)
}

fn fmt_list(xs: &[usize]) -> String {
    let body: Vec<String> = xs.iter().map(ToString::to_string).collect();
    format!("[{}]", body.join(","))
}
