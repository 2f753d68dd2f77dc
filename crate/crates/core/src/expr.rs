//! Expression grammar: tokens, prefix paths with arity-slot accounting, tree
//! construction, evaluation and infix rendering.
//!
//! An expression is built as a pre-order (prefix) sequence of tokens. A path
//! keeps a count of open argument slots: pushing a token of arity `a` turns
//! one open slot into `a` new ones, so the count changes by `a - 1`. The path
//! is a valid complete expression exactly when the count reaches zero.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Token identifier. Base tokens occupy `0..12`, the sampler-facing
/// augmented token is [`AUGMENTED_TOKEN`], and mined library entries are
/// numbered from [`FIRST_AUGMENTED_ENTRY_ID`] upward.
pub type SymbolId = u16;

/// Id of the single augmented token exposed to the expansion sampler.
pub const AUGMENTED_TOKEN: SymbolId = 12;

/// First id handed out to concrete mined library entries.
pub const FIRST_AUGMENTED_ENTRY_ID: SymbolId = 13;

/// Size of the action space seen by the search and the policy head:
/// the twelve base tokens plus the augmented token.
pub const ACTION_SPACE: usize = 13;

/// The base grammar tokens. Discriminant order fixes both the symbol ids and
/// every deterministic tie-break in the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseToken {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Log,
    Exp,
    Sqrt,
    /// Power with a tunable constant exponent: `x ^ C`. General `pow` with an
    /// expression exponent is not part of the grammar.
    PowC,
    /// The time variable `t`.
    VarT,
    /// A constant placeholder; each occurrence is an independent coefficient.
    Const,
}

impl BaseToken {
    pub const ALL: [BaseToken; 12] = [
        BaseToken::Add,
        BaseToken::Sub,
        BaseToken::Mul,
        BaseToken::Div,
        BaseToken::Sin,
        BaseToken::Cos,
        BaseToken::Log,
        BaseToken::Exp,
        BaseToken::Sqrt,
        BaseToken::PowC,
        BaseToken::VarT,
        BaseToken::Const,
    ];

    pub fn id(self) -> SymbolId {
        self as SymbolId
    }

    pub fn from_id(id: SymbolId) -> Option<BaseToken> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn arity(self) -> u8 {
        match self {
            BaseToken::Add | BaseToken::Sub | BaseToken::Mul | BaseToken::Div => 2,
            BaseToken::Sin
            | BaseToken::Cos
            | BaseToken::Log
            | BaseToken::Exp
            | BaseToken::Sqrt
            | BaseToken::PowC => 1,
            BaseToken::VarT | BaseToken::Const => 0,
        }
    }

    pub fn kind(self) -> SymbolKind {
        match self {
            BaseToken::Add | BaseToken::Sub | BaseToken::Mul | BaseToken::Div => {
                SymbolKind::BinaryOp
            }
            BaseToken::Sin
            | BaseToken::Cos
            | BaseToken::Log
            | BaseToken::Exp
            | BaseToken::Sqrt
            | BaseToken::PowC => SymbolKind::UnaryOp,
            BaseToken::VarT => SymbolKind::Variable,
            BaseToken::Const => SymbolKind::ConstPlaceholder,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseToken::Add => "add",
            BaseToken::Sub => "sub",
            BaseToken::Mul => "mul",
            BaseToken::Div => "div",
            BaseToken::Sin => "sin",
            BaseToken::Cos => "cos",
            BaseToken::Log => "log",
            BaseToken::Exp => "exp",
            BaseToken::Sqrt => "sqrt",
            BaseToken::PowC => "powc",
            BaseToken::VarT => "t",
            BaseToken::Const => "c",
        }
    }
}

/// Arity of a token id as it appears inside a path. Paths only ever contain
/// base tokens (augmented patterns are inlined before they reach a path).
pub fn token_arity(id: SymbolId) -> Result<u8> {
    BaseToken::from_id(id)
        .map(BaseToken::arity)
        .ok_or(Error::Vocabulary(id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolKind {
    BinaryOp,
    UnaryOp,
    Variable,
    ConstPlaceholder,
    Augmented,
}

/// Library-facing descriptor of one token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub id: SymbolId,
    pub arity: u8,
    pub kind: SymbolKind,
    pub name: String,
}

impl Symbol {
    pub fn base(tok: BaseToken) -> Symbol {
        Symbol {
            id: tok.id(),
            arity: tok.arity(),
            kind: tok.kind(),
            name: tok.name().to_string(),
        }
    }
}

/// A prefix token sequence under construction, with open-slot accounting.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ExpressionPath {
    tokens: Vec<SymbolId>,
    open_slots: u32,
}

impl ExpressionPath {
    pub fn new() -> ExpressionPath {
        // One slot for the root of the (yet unbuilt) expression.
        ExpressionPath {
            tokens: Vec::new(),
            open_slots: 1,
        }
    }

    /// Rebuild a path from raw token ids, validating slot accounting. A
    /// prefix may not complete early (extra tokens after slot exhaustion are
    /// a grammar violation).
    pub fn from_tokens(ids: &[SymbolId]) -> Result<ExpressionPath> {
        let mut path = ExpressionPath::new();
        for &id in ids {
            let tok = BaseToken::from_id(id).ok_or(Error::Vocabulary(id))?;
            path = path.push_token(tok)?;
        }
        Ok(path)
    }

    pub fn tokens(&self) -> &[SymbolId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn open_slots(&self) -> u32 {
        self.open_slots
    }

    /// True iff the path encodes one whole expression.
    pub fn is_complete(&self) -> bool {
        self.open_slots == 0 && !self.tokens.is_empty()
    }

    /// Shortest length this path can reach once completed: every open slot
    /// still needs at least one terminal.
    pub fn min_completed_len(&self) -> usize {
        self.len() + self.open_slots as usize
    }

    /// Append one base token, consuming an open slot and opening `arity` new
    /// ones.
    pub fn push_token(&self, tok: BaseToken) -> Result<ExpressionPath> {
        if self.is_complete() {
            return Err(Error::Grammar(format!(
                "cannot append '{}' to a complete path",
                tok.name()
            )));
        }
        let mut next = self.clone();
        next.tokens.push(tok.id());
        next.open_slots = next.open_slots - 1 + tok.arity() as u32;
        Ok(next)
    }

    /// Inline a complete pattern into the next open slot. The pattern's
    /// tokens are appended verbatim, so its `Const` tokens become fresh
    /// coefficient slots of the receiving expression.
    pub fn push_pattern(&self, pattern: &ExpressionPath) -> Result<ExpressionPath> {
        if self.is_complete() {
            return Err(Error::Grammar(
                "cannot inline a pattern into a complete path".into(),
            ));
        }
        if !pattern.is_complete() {
            return Err(Error::Grammar(
                "only complete patterns may be inlined".into(),
            ));
        }
        let mut next = self.clone();
        next.tokens.extend_from_slice(&pattern.tokens);
        next.open_slots -= 1;
        Ok(next)
    }

    /// Fill every remaining open slot with the variable terminal `t`.
    pub fn autocomplete(&self) -> ExpressionPath {
        let mut path = self.clone();
        while !path.is_complete() {
            path = path
                .push_token(BaseToken::VarT)
                .expect("terminal push on incomplete path cannot fail");
        }
        path
    }

    /// Space-separated symbol ids, the prefix token-list report format.
    pub fn to_id_string(&self) -> String {
        let parts: Vec<String> = self.tokens.iter().map(|id| id.to_string()).collect();
        parts.join(" ")
    }

    pub fn from_id_string(s: &str) -> Result<ExpressionPath> {
        let mut ids = Vec::new();
        for part in s.split_whitespace() {
            let id: SymbolId = part
                .parse()
                .map_err(|_| Error::Format(format!("bad token id '{part}'")))?;
            ids.push(id);
        }
        ExpressionPath::from_tokens(&ids)
    }
}

/// One node of a parsed expression tree. Coefficient slots are numbered in
/// prefix visit order; a `PowConst` node takes its exponent slot when the
/// node itself is visited, before its child subtree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Log(Box<Node>),
    Exp(Box<Node>),
    Sqrt(Box<Node>),
    PowConst(Box<Node>, usize),
    Var,
    Const(usize),
}

/// A parsed expression with coefficient slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTree {
    root: Node,
    size: usize,
    n_slots: usize,
}

impl ExpressionTree {
    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Node count of the tree (equals the token count of its path).
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of tunable coefficients.
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }
}

/// Parse a complete path into a tree.
pub fn to_tree(path: &ExpressionPath) -> Result<ExpressionTree> {
    if !path.is_complete() {
        return Err(Error::IncompleteExpression(path.open_slots().max(1)));
    }
    let mut pos = 0usize;
    let mut next_slot = 0usize;
    let root = parse_node(path.tokens(), &mut pos, &mut next_slot)?;
    debug_assert_eq!(pos, path.len());
    Ok(ExpressionTree {
        root,
        size: path.len(),
        n_slots: next_slot,
    })
}

fn parse_node(tokens: &[SymbolId], pos: &mut usize, next_slot: &mut usize) -> Result<Node> {
    let id = *tokens
        .get(*pos)
        .ok_or_else(|| Error::Grammar("token sequence ended early".into()))?;
    *pos += 1;
    let tok = BaseToken::from_id(id).ok_or(Error::Vocabulary(id))?;
    let node = match tok {
        BaseToken::Add => Node::Add(
            Box::new(parse_node(tokens, pos, next_slot)?),
            Box::new(parse_node(tokens, pos, next_slot)?),
        ),
        BaseToken::Sub => Node::Sub(
            Box::new(parse_node(tokens, pos, next_slot)?),
            Box::new(parse_node(tokens, pos, next_slot)?),
        ),
        BaseToken::Mul => Node::Mul(
            Box::new(parse_node(tokens, pos, next_slot)?),
            Box::new(parse_node(tokens, pos, next_slot)?),
        ),
        BaseToken::Div => Node::Div(
            Box::new(parse_node(tokens, pos, next_slot)?),
            Box::new(parse_node(tokens, pos, next_slot)?),
        ),
        BaseToken::Sin => Node::Sin(Box::new(parse_node(tokens, pos, next_slot)?)),
        BaseToken::Cos => Node::Cos(Box::new(parse_node(tokens, pos, next_slot)?)),
        BaseToken::Log => Node::Log(Box::new(parse_node(tokens, pos, next_slot)?)),
        BaseToken::Exp => Node::Exp(Box::new(parse_node(tokens, pos, next_slot)?)),
        BaseToken::Sqrt => Node::Sqrt(Box::new(parse_node(tokens, pos, next_slot)?)),
        BaseToken::PowC => {
            let slot = *next_slot;
            *next_slot += 1;
            Node::PowConst(Box::new(parse_node(tokens, pos, next_slot)?), slot)
        }
        BaseToken::VarT => Node::Var,
        BaseToken::Const => {
            let slot = *next_slot;
            *next_slot += 1;
            Node::Const(slot)
        }
    };
    Ok(node)
}

/// Evaluate a tree at time `t` with the given coefficients.
///
/// Any domain violation (log of a non-positive value, division by zero,
/// overflow, a non-finite power) collapses the result to NaN instead of
/// aborting; callers map non-finite fits to reward zero.
pub fn evaluate(tree: &ExpressionTree, coeffs: &[f64], t: f64) -> Result<f64> {
    if coeffs.len() != tree.n_slots {
        return Err(Error::ArityMismatch {
            expected: tree.n_slots,
            got: coeffs.len(),
        });
    }
    Ok(eval_node(&tree.root, coeffs, t))
}

fn eval_node(node: &Node, coeffs: &[f64], t: f64) -> f64 {
    let v = match node {
        Node::Add(a, b) => eval_node(a, coeffs, t) + eval_node(b, coeffs, t),
        Node::Sub(a, b) => eval_node(a, coeffs, t) - eval_node(b, coeffs, t),
        Node::Mul(a, b) => eval_node(a, coeffs, t) * eval_node(b, coeffs, t),
        Node::Div(a, b) => eval_node(a, coeffs, t) / eval_node(b, coeffs, t),
        Node::Sin(a) => eval_node(a, coeffs, t).sin(),
        Node::Cos(a) => eval_node(a, coeffs, t).cos(),
        Node::Log(a) => eval_node(a, coeffs, t).ln(),
        Node::Exp(a) => eval_node(a, coeffs, t).exp(),
        Node::Sqrt(a) => eval_node(a, coeffs, t).sqrt(),
        Node::PowConst(a, slot) => eval_node(a, coeffs, t).powf(coeffs[*slot]),
        Node::Var => t,
        Node::Const(slot) => coeffs[*slot],
    };
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Render the tree as a deterministic, fully parenthesized infix string.
/// Coefficients use the shortest exact decimal form.
pub fn to_infix(tree: &ExpressionTree, coeffs: &[f64]) -> Result<String> {
    if coeffs.len() != tree.n_slots {
        return Err(Error::ArityMismatch {
            expected: tree.n_slots,
            got: coeffs.len(),
        });
    }
    let mut out = String::new();
    write_infix(&tree.root, coeffs, &mut out);
    Ok(out)
}

fn write_infix(node: &Node, coeffs: &[f64], out: &mut String) {
    match node {
        Node::Add(a, b) => write_binary(a, b, "+", coeffs, out),
        Node::Sub(a, b) => write_binary(a, b, "-", coeffs, out),
        Node::Mul(a, b) => write_binary(a, b, "*", coeffs, out),
        Node::Div(a, b) => write_binary(a, b, "/", coeffs, out),
        Node::Sin(a) => write_call("sin", a, coeffs, out),
        Node::Cos(a) => write_call("cos", a, coeffs, out),
        Node::Log(a) => write_call("log", a, coeffs, out),
        Node::Exp(a) => write_call("exp", a, coeffs, out),
        Node::Sqrt(a) => write_call("sqrt", a, coeffs, out),
        Node::PowConst(a, slot) => {
            out.push('(');
            write_infix(a, coeffs, out);
            out.push_str(" ^ ");
            out.push_str(&format_coeff(coeffs[*slot]));
            out.push(')');
        }
        Node::Var => out.push('t'),
        Node::Const(slot) => out.push_str(&format_coeff(coeffs[*slot])),
    }
}

fn write_binary(a: &Node, b: &Node, op: &str, coeffs: &[f64], out: &mut String) {
    out.push('(');
    write_infix(a, coeffs, out);
    out.push(' ');
    out.push_str(op);
    out.push(' ');
    write_infix(b, coeffs, out);
    out.push(')');
}

fn write_call(name: &str, a: &Node, coeffs: &[f64], out: &mut String) {
    out.push_str(name);
    out.push('(');
    write_infix(a, coeffs, out);
    out.push(')');
}

fn format_coeff(c: f64) -> String {
    // `{}` on f64 is the shortest string that parses back to the same value.
    format!("{c}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(toks: &[BaseToken]) -> ExpressionPath {
        let mut p = ExpressionPath::new();
        for &t in toks {
            p = p.push_token(t).unwrap();
        }
        p
    }

    #[test]
    fn push_token_tracks_open_slots() {
        let p = ExpressionPath::new();
        assert_eq!(p.open_slots(), 1);
        let p = p.push_token(BaseToken::Add).unwrap();
        assert_eq!(p.open_slots(), 2);
        let p = p.push_token(BaseToken::VarT).unwrap();
        assert_eq!(p.open_slots(), 1);
        let p = p.push_token(BaseToken::Const).unwrap();
        assert_eq!(p.open_slots(), 0);
        assert!(p.is_complete());
    }

    #[test]
    fn push_onto_complete_path_is_a_grammar_error() {
        let p = path(&[BaseToken::Add, BaseToken::VarT, BaseToken::Const]);
        assert!(matches!(
            p.push_token(BaseToken::Sin),
            Err(Error::Grammar(_))
        ));
    }

    #[test]
    fn is_complete_cases() {
        assert!(path(&[BaseToken::Add, BaseToken::VarT, BaseToken::Const]).is_complete());
        assert!(!path(&[BaseToken::Sin]).is_complete());
        assert!(!ExpressionPath::new().is_complete());
    }

    #[test]
    fn to_tree_simple_sum() {
        let p = path(&[BaseToken::Add, BaseToken::VarT, BaseToken::Const]);
        let tree = to_tree(&p).unwrap();
        assert_eq!(tree.size(), 3);
        assert_eq!(tree.n_slots(), 1);
        assert_eq!(
            tree.root(),
            &Node::Add(Box::new(Node::Var), Box::new(Node::Const(0)))
        );
    }

    #[test]
    fn to_tree_preorder_with_arities() {
        // c0 * sin(t)
        let p = path(&[
            BaseToken::Mul,
            BaseToken::Const,
            BaseToken::Sin,
            BaseToken::VarT,
        ]);
        let tree = to_tree(&p).unwrap();
        assert_eq!(tree.size(), 4);
        assert_eq!(tree.n_slots(), 1);
        assert_eq!(
            tree.root(),
            &Node::Mul(
                Box::new(Node::Const(0)),
                Box::new(Node::Sin(Box::new(Node::Var)))
            )
        );
    }

    #[test]
    fn to_tree_rejects_incomplete() {
        let p = path(&[BaseToken::Sin]);
        assert!(matches!(to_tree(&p), Err(Error::IncompleteExpression(_))));
    }

    #[test]
    fn evaluate_basic() {
        let sin_t = to_tree(&path(&[BaseToken::Sin, BaseToken::VarT])).unwrap();
        assert_eq!(evaluate(&sin_t, &[], 0.0).unwrap(), 0.0);

        let c_times_t =
            to_tree(&path(&[BaseToken::Mul, BaseToken::Const, BaseToken::VarT])).unwrap();
        assert_eq!(evaluate(&c_times_t, &[2.0], 3.0).unwrap(), 6.0);
    }

    #[test]
    fn evaluate_domain_violation_yields_nan() {
        let log_t = to_tree(&path(&[BaseToken::Log, BaseToken::VarT])).unwrap();
        assert!(evaluate(&log_t, &[], -1.0).unwrap().is_nan());
        // division by zero at t = 0
        let div = to_tree(&path(&[BaseToken::Div, BaseToken::Const, BaseToken::VarT])).unwrap();
        assert!(evaluate(&div, &[1.0], 0.0).unwrap().is_nan());
        // a non-finite intermediate stays non-finite even through exp
        let exp_log = to_tree(&path(&[BaseToken::Exp, BaseToken::Log, BaseToken::VarT])).unwrap();
        assert!(evaluate(&exp_log, &[], 0.0).unwrap().is_nan());
    }

    #[test]
    fn evaluate_checks_coefficient_count() {
        let tree = to_tree(&path(&[BaseToken::Add, BaseToken::VarT, BaseToken::Const])).unwrap();
        assert!(matches!(
            evaluate(&tree, &[], 0.0),
            Err(Error::ArityMismatch {
                expected: 1,
                got: 0
            })
        ));
    }

    #[test]
    fn infix_rendering() {
        let sum = to_tree(&path(&[BaseToken::Add, BaseToken::VarT, BaseToken::Const])).unwrap();
        assert_eq!(to_infix(&sum, &[0.5]).unwrap(), "(t + 0.5)");

        let scaled_sin = to_tree(&path(&[
            BaseToken::Mul,
            BaseToken::Const,
            BaseToken::Sin,
            BaseToken::VarT,
        ]))
        .unwrap();
        assert_eq!(to_infix(&scaled_sin, &[2.0]).unwrap(), "(2 * sin(t))");

        let var = to_tree(&path(&[BaseToken::VarT])).unwrap();
        assert_eq!(to_infix(&var, &[]).unwrap(), "t");
    }

    #[test]
    fn powc_takes_a_slot_and_renders_as_caret() {
        // (t ^ c0) + c1
        let p = path(&[
            BaseToken::Add,
            BaseToken::PowC,
            BaseToken::VarT,
            BaseToken::Const,
        ]);
        let tree = to_tree(&p).unwrap();
        assert_eq!(tree.n_slots(), 2);
        assert_eq!(to_infix(&tree, &[2.0, 1.5]).unwrap(), "((t ^ 2) + 1.5)");
        let v = evaluate(&tree, &[2.0, 1.5], 3.0).unwrap();
        assert!((v - 10.5).abs() < 1e-12);
    }

    #[test]
    fn pattern_inlining_consumes_one_slot() {
        let pattern = path(&[BaseToken::Sin, BaseToken::VarT]);
        let base = ExpressionPath::new().push_token(BaseToken::Add).unwrap();
        let combined = base.push_pattern(&pattern).unwrap();
        assert_eq!(combined.open_slots(), 1);
        let done = combined.push_token(BaseToken::Const).unwrap();
        assert!(done.is_complete());
        assert_eq!(to_tree(&done).unwrap().size(), 4);
    }

    #[test]
    fn id_string_round_trip() {
        let p = path(&[
            BaseToken::Add,
            BaseToken::Sin,
            BaseToken::VarT,
            BaseToken::Const,
        ]);
        let s = p.to_id_string();
        assert_eq!(s, "0 4 10 11");
        assert_eq!(ExpressionPath::from_id_string(&s).unwrap(), p);
    }

    #[test]
    fn from_tokens_rejects_overflow_and_unknown_ids() {
        assert!(ExpressionPath::from_tokens(&[10, 11]).is_err()); // t then trailing c
        assert!(ExpressionPath::from_tokens(&[99]).is_err());
    }
}
