//! Python AST access on top of tree-sitter: parsing, node-type lookup,
//! traversal label sequences and the seven code confounders.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use tree_sitter::{Language, Node, Parser, Tree, TreeCursor};

use crate::error::{Error, Result};

/// Node types whose occurrences each add one path to cyclomatic complexity.
pub const DECISION_NODE_TYPES: [&str; 9] = [
    "if_statement",
    "elif_clause",
    "conditional_expression",
    "for_statement",
    "while_statement",
    "except_clause",
    "case_clause",
    "boolean_operator",
    "assert_statement",
];

/// The node types studied by default: control, iteration, operators and
/// functional constructs.
pub const DEFAULT_NODE_TYPES: [&str; 11] = [
    "boolean_operator",
    "comparison_operator",
    "for_in_clause",
    "for_statement",
    "identifier",
    "if_clause",
    "if_statement",
    "parameters",
    "return_statement",
    "string",
    "while_statement",
];

pub fn language() -> Language {
    tree_sitter_python::LANGUAGE.into()
}

thread_local! {
    static PARSER: RefCell<Parser> = RefCell::new({
        let mut parser = Parser::new();
        parser
            .set_language(&language())
            .expect("bundled Python grammar is ABI compatible");
        parser
    });
}

/// A parsed snippet. Owns a copy of the source so token text can be read
/// back without threading the source through every call.
pub struct AstTree {
    tree: Tree,
    source: String,
}

impl std::fmt::Debug for AstTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AstTree")
            .field("root", &self.root_kind())
            .field("sexp", &self.tree.root_node().to_sexp())
            .finish()
    }
}

/// Parses Python source. Never fails: syntax errors become `ERROR` or
/// missing nodes inside the returned tree.
pub fn parse(source: &str) -> AstTree {
    let tree = PARSER.with(|p| {
        let mut parser = p.borrow_mut();
        parser.reset();
        parser.parse(source, None)
    });
    AstTree {
        tree: tree.expect("parser has a language and no timeout"),
        source: source.to_owned(),
    }
}

/// Byte range `[start, end)`.
pub type ByteSpan = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpan {
    pub node_type: String,
    pub start_byte: usize,
    pub end_byte: usize,
    pub leaf_token_spans: Vec<ByteSpan>,
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct ConfounderVector {
    pub parse_errors: u32,
    pub ast_height: u32,
    pub ast_nodes: u32,
    pub whitespaces: u32,
    pub loc: u32,
    pub cyclo: u32,
    pub token_count: u32,
}

impl ConfounderVector {
    pub const NAMES: [&'static str; 7] = [
        "parse_errors",
        "ast_height",
        "ast_nodes",
        "whitespaces",
        "loc",
        "cyclo",
        "token_count",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.parse_errors as f64,
            self.ast_height as f64,
            self.ast_nodes as f64,
            self.whitespaces as f64,
            self.loc as f64,
            self.cyclo as f64,
            self.token_count as f64,
        ]
    }
}

/// A concrete token: a childless node with a non-empty byte span. Missing
/// nodes inserted by error recovery are zero-width and never count.
fn is_token(node: &Node<'_>) -> bool {
    node.child_count() == 0 && node.start_byte() < node.end_byte()
}

/// Pre-order walk calling `visit(node, depth)` with depth starting at 1.
fn walk_preorder<'t>(cursor: &mut TreeCursor<'t>, mut visit: impl FnMut(Node<'t>, usize)) {
    let mut depth = 1;
    loop {
        visit(cursor.node(), depth);
        if cursor.goto_first_child() {
            depth += 1;
            continue;
        }
        loop {
            if cursor.goto_next_sibling() {
                break;
            }
            if !cursor.goto_parent() {
                return;
            }
            depth -= 1;
        }
    }
}

impl AstTree {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn root_kind(&self) -> &'static str {
        self.tree.root_node().kind()
    }

    pub fn has_errors(&self) -> bool {
        self.tree.root_node().has_error()
    }

    /// Every node in document (pre-)order, named and anonymous.
    pub fn nodes(&self) -> Vec<Node<'_>> {
        let mut out = Vec::new();
        walk_preorder(&mut self.tree.walk(), |n, _| out.push(n));
        out
    }

    /// Byte spans of all concrete tokens, left to right.
    pub fn leaf_tokens(&self) -> Vec<ByteSpan> {
        leaf_tokens_under(self.root())
    }

    pub fn token_text(&self, span: ByteSpan) -> &str {
        &self.source[span.0..span.1]
    }
}

fn leaf_tokens_under(node: Node<'_>) -> Vec<ByteSpan> {
    let mut out = Vec::new();
    walk_preorder(&mut node.walk(), |n, _| {
        if is_token(&n) {
            out.push((n.start_byte(), n.end_byte()));
        }
    });
    out
}

/// All non-empty nodes labelled `node_type`, in document order, each with
/// the concrete tokens it covers.
pub fn find_node_spans(tree: &AstTree, node_type: &str) -> Vec<NodeSpan> {
    let mut out = Vec::new();
    if node_type.is_empty() {
        return out;
    }
    walk_preorder(&mut tree.tree.walk(), |n, _| {
        if n.kind() == node_type && n.start_byte() < n.end_byte() {
            out.push(NodeSpan {
                node_type: node_type.to_owned(),
                start_byte: n.start_byte(),
                end_byte: n.end_byte(),
                leaf_token_spans: leaf_tokens_under(n),
            });
        }
    });
    out
}

/// Named-node labels from a left-to-right depth-first walk, each emitted on
/// first visit.
pub fn traversal_labels(tree: &AstTree) -> Vec<&'static str> {
    let mut out = Vec::new();
    walk_preorder(&mut tree.tree.walk(), |n, _| {
        if n.is_named() {
            out.push(n.kind());
        }
    });
    out
}

fn is_source_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | '\n')
}

pub fn extract_confounders(source: &str, tree: &AstTree) -> ConfounderVector {
    let mut v = ConfounderVector {
        cyclo: 1,
        ..Default::default()
    };
    walk_preorder(&mut tree.tree.walk(), |n, depth| {
        v.ast_nodes += 1;
        v.ast_height = v.ast_height.max(depth as u32);
        if n.is_error() || n.is_missing() {
            v.parse_errors += 1;
        }
        if is_token(&n) {
            v.token_count += 1;
        }
        if DECISION_NODE_TYPES.contains(&n.kind()) {
            v.cyclo += 1;
        }
    });
    v.whitespaces = source.chars().filter(|&c| is_source_whitespace(c)).count() as u32;
    v.loc = source
        .lines()
        .filter(|l| l.chars().any(|c| !c.is_whitespace()))
        .count() as u32;
    v
}

/// Parses and extracts in one step.
pub fn confounders_of(source: &str) -> ConfounderVector {
    extract_confounders(source, &parse(source))
}

/// Node-type labels under study, checked against the grammar inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct NodeTypeSet(Vec<String>);

impl NodeTypeSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lang = language();
        let mut out: Vec<String> = Vec::new();
        for label in labels {
            let label = label.into();
            if lang.id_for_node_kind(&label, true) == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{label:?} is not a named node type of the Python grammar"
                )));
            }
            if !out.contains(&label) {
                out.push(label);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("node type set is empty".into()));
        }
        Ok(NodeTypeSet(out))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for NodeTypeSet {
    fn default() -> Self {
        NodeTypeSet(DEFAULT_NODE_TYPES.iter().map(|s| s.to_string()).collect())
    }
}

impl TryFrom<Vec<String>> for NodeTypeSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        NodeTypeSet::new(v)
    }
}

impl From<NodeTypeSet> for Vec<String> {
    fn from(s: NodeTypeSet) -> Self {
        s.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignment_cleanly() {
        let t = parse("x = 1");
        assert_eq!(t.root_kind(), "module");
        assert_eq!(extract_confounders("x = 1", &t).parse_errors, 0);
    }

    #[test]
    fn empty_source_is_bare_root() {
        let t = parse("");
        assert_eq!(t.root().child_count(), 0);
        assert_eq!(traversal_labels(&t), ["module"]);
    }

    #[test]
    fn broken_source_has_error_nodes() {
        let src = "def f(:";
        let t = parse(src);
        assert!(t.has_errors());
        assert!(extract_confounders(src, &t).parse_errors >= 1);
    }

    #[test]
    fn if_statement_span_covers_statement() {
        let src = "if a:\n    b()";
        let spans = find_node_spans(&parse(src), "if_statement");
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start_byte, spans[0].end_byte), (0, src.len()));
    }

    #[test]
    fn absent_type_gives_no_spans() {
        assert!(find_node_spans(&parse("x = 1"), "while_statement").is_empty());
    }

    #[test]
    fn identifiers_in_document_order() {
        let t = parse("x = y + z");
        let spans = find_node_spans(&t, "identifier");
        let texts: Vec<_> = spans
            .iter()
            .map(|s| t.token_text((s.start_byte, s.end_byte)))
            .collect();
        assert_eq!(texts, ["x", "y", "z"]);
        assert!(spans.iter().all(|s| s.leaf_token_spans.len() == 1));
    }

    #[test]
    fn traversal_is_preorder_over_named_nodes() {
        let labels = traversal_labels(&parse("x = 1"));
        assert_eq!(
            labels,
            [
                "module",
                "expression_statement",
                "assignment",
                "identifier",
                "integer"
            ]
        );
    }

    #[test]
    fn empty_source_confounders() {
        let v = confounders_of("");
        assert_eq!(
            v,
            ConfounderVector {
                parse_errors: 0,
                ast_height: 1,
                ast_nodes: 1,
                whitespaces: 0,
                loc: 0,
                cyclo: 1,
                token_count: 0,
            }
        );
    }

    #[test]
    fn function_confounders() {
        let v = confounders_of("def f(x):\n    return x");
        assert_eq!((v.whitespaces, v.loc, v.cyclo), (7, 2, 1));
    }

    #[test]
    fn if_else_cyclo() {
        assert_eq!(confounders_of("if a:\n    b()\nelse:\n    c()").cyclo, 2);
    }

    #[test]
    fn node_type_set_validates_labels() {
        assert!(NodeTypeSet::new(["identifier", "for_statement"]).is_ok());
        assert!(NodeTypeSet::new(["not_a_node"]).is_err());
        assert!(NodeTypeSet::new(Vec::<String>::new()).is_err());
        let all = NodeTypeSet::default();
        assert_eq!(NodeTypeSet::new(all.labels().to_vec()).unwrap(), all);
    }
}
