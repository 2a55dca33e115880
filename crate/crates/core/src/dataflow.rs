//! Variable-level def-use edges from a concrete syntax tree.
//!
//! Every identifier occurrence in a variable position becomes a node; each
//! use is linked to the definition site(s) that reach it. Branches are
//! walked on copies of the environment and merged; loop bodies are walked
//! twice so that loop-carried definitions reach uses at the top of the body.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser};

use crate::corpus::Language;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// Byte range in the source.
    pub span: Range<usize>,
}

/// Directed edge from a use to a reaching definition (indices into
/// [`DataFlow::variables`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DfgEdge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlow {
    pub variables: Vec<Variable>,
    pub edges: Vec<DfgEdge>,
    /// Extraction failed (parse error or unsupported language); the encoder
    /// falls back to token-only input.
    pub degraded: bool,
}

impl DataFlow {
    fn degraded() -> Self {
        DataFlow {
            degraded: true,
            ..Default::default()
        }
    }

    /// Edges as `(use span, def span)` byte ranges.
    pub fn span_edges(&self) -> Vec<(Range<usize>, Range<usize>)> {
        self.edges
            .iter()
            .map(|e| {
                (
                    self.variables[e.from].span.clone(),
                    self.variables[e.to].span.clone(),
                )
            })
            .collect()
    }
}

pub fn extract_dataflow(source: &str, language: Language) -> DataFlow {
    let grammar: tree_sitter::Language = match language {
        Language::Python => tree_sitter_python::LANGUAGE.into(),
        Language::Java => tree_sitter_java::LANGUAGE.into(),
        Language::Cpp => tree_sitter_cpp::LANGUAGE.into(),
        Language::Other => return DataFlow::degraded(),
    };
    let mut parser = Parser::new();
    if parser.set_language(&grammar).is_err() {
        return DataFlow::degraded();
    }
    let Some(tree) = parser.parse(source, None) else {
        return DataFlow::degraded();
    };
    let root = tree.root_node();
    if root.has_error() {
        return DataFlow::degraded();
    }
    let mut walker = Walker {
        src: source.as_bytes(),
        language,
        variables: Vec::new(),
        by_span: HashMap::new(),
        edges: BTreeSet::new(),
    };
    let mut env = Env::default();
    walker.walk(root, &mut env);
    DataFlow {
        variables: walker.variables,
        edges: walker.edges.into_iter().collect(),
        degraded: false,
    }
}

/// Name -> definition sites reaching the current point.
#[derive(Debug, Clone, Default)]
struct Env(HashMap<String, BTreeSet<usize>>);

impl Env {
    fn merge(&mut self, other: Env) {
        for (name, defs) in other.0 {
            self.0.entry(name).or_default().extend(defs);
        }
    }
}

struct Walker<'a> {
    src: &'a [u8],
    language: Language,
    variables: Vec<Variable>,
    by_span: HashMap<(usize, usize), usize>,
    edges: BTreeSet<DfgEdge>,
}

fn children<'t>(node: Node<'t>) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor).collect()
}

fn field_all<'t>(node: Node<'t>, name: &str) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.children_by_field_name(name, &mut cursor).collect()
}

impl<'a> Walker<'a> {
    fn text(&self, node: Node) -> String {
        String::from_utf8_lossy(&self.src[node.byte_range()]).into_owned()
    }

    fn occurrence(&mut self, node: Node) -> usize {
        let key = (node.start_byte(), node.end_byte());
        if let Some(&i) = self.by_span.get(&key) {
            return i;
        }
        let i = self.variables.len();
        self.variables.push(Variable {
            name: self.text(node),
            span: node.byte_range(),
        });
        self.by_span.insert(key, i);
        i
    }

    fn use_var(&mut self, node: Node, env: &Env) {
        let name = self.text(node);
        let occ = self.occurrence(node);
        if let Some(defs) = env.0.get(&name) {
            for &d in defs {
                if d != occ {
                    self.edges.insert(DfgEdge { from: occ, to: d });
                }
            }
        }
    }

    fn define_var(&mut self, node: Node, env: &mut Env) {
        let name = self.text(node);
        let occ = self.occurrence(node);
        env.0.insert(name, BTreeSet::from([occ]));
    }

    /// Defines every variable named by an assignment target. Subscript and
    /// attribute targets only read their base expression.
    fn define_target(&mut self, node: Node, env: &mut Env) {
        match node.kind() {
            "identifier" => self.define_var(node, env),
            "pattern_list" | "tuple_pattern" | "list_pattern" | "list_splat_pattern"
            | "as_pattern_target" | "parenthesized_expression" | "tuple" | "list"
            | "dictionary_splat_pattern" => {
                for c in children(node) {
                    self.define_target(c, env);
                }
            }
            "init_declarator" | "pointer_declarator" | "reference_declarator"
            | "array_declarator" | "variable_declarator" => {
                if let Some(d) = node
                    .child_by_field_name("declarator")
                    .or_else(|| node.child_by_field_name("name"))
                {
                    self.define_target(d, env);
                } else if let Some(id) = children(node).into_iter().find(|c| c.kind() == "identifier")
                {
                    self.define_var(id, env);
                }
                if let Some(size) = node.child_by_field_name("size") {
                    self.walk(size, env);
                }
            }
            _ => self.walk(node, env),
        }
    }

    fn walk_opt(&mut self, node: Option<Node>, env: &mut Env) {
        if let Some(n) = node {
            self.walk(n, env);
        }
    }

    fn walk_children(&mut self, node: Node, env: &mut Env) {
        for c in children(node) {
            self.walk(c, env);
        }
    }

    /// Walks `body` twice, merging with the entry state: the loop may run
    /// zero or more times.
    fn walk_loop(&mut self, env: &mut Env, mut body: impl FnMut(&mut Self, &mut Env)) {
        let entry = env.clone();
        for _ in 0..2 {
            body(self, env);
            env.merge(entry.clone());
        }
    }

    fn walk_scoped(&mut self, env: &Env, f: impl FnOnce(&mut Self, &mut Env)) {
        let mut inner = env.clone();
        f(self, &mut inner);
    }

    fn walk(&mut self, node: Node, env: &mut Env) {
        match (self.language, node.kind()) {
            (_, "identifier") => self.use_var(node, env),
            (_, "comment" | "string" | "string_literal" | "raw_string_literal" | "char_literal"
                | "character_literal" | "text_block")
                if !self.has_interpolation(node) => {}
            (_, "type" | "type_identifier" | "primitive_type" | "integral_type"
                | "floating_point_type" | "type_arguments" | "template_argument_list"
                | "generic_type" | "array_type" | "scoped_type_identifier" | "field_identifier"
                | "namespace_identifier" | "preproc_include" | "import_statement"
                | "import_from_statement" | "import_declaration" | "package_declaration"
                | "global_statement" | "nonlocal_statement" | "using_declaration"
                | "sized_type_specifier" | "placeholder_type_specifier" | "annotation"
                | "marker_annotation") => {}

            // assignments
            (Language::Python, "assignment") => {
                self.walk_opt(node.child_by_field_name("right"), env);
                if let Some(left) = node.child_by_field_name("left") {
                    self.define_target(left, env);
                }
            }
            (Language::Python, "augmented_assignment") => {
                self.walk_opt(node.child_by_field_name("right"), env);
                if let Some(left) = node.child_by_field_name("left") {
                    self.walk(left, env);
                    self.define_target(left, env);
                }
            }
            (Language::Python, "named_expression") => {
                self.walk_opt(node.child_by_field_name("value"), env);
                if let Some(name) = node.child_by_field_name("name") {
                    self.define_target(name, env);
                }
            }
            (Language::Java | Language::Cpp, "assignment_expression") => {
                self.walk_opt(node.child_by_field_name("right"), env);
                if let Some(left) = node.child_by_field_name("left") {
                    let compound = node
                        .child_by_field_name("operator")
                        .map(|op| self.text(op) != "=")
                        .unwrap_or(false);
                    if left.kind() == "identifier" {
                        if compound {
                            self.use_var(left, env);
                        }
                        self.define_var(left, env);
                    } else {
                        self.walk(left, env);
                    }
                }
            }
            (Language::Java | Language::Cpp, "update_expression") => {
                let target = node
                    .child_by_field_name("argument")
                    .or_else(|| children(node).into_iter().next());
                if let Some(t) = target {
                    if t.kind() == "identifier" {
                        self.use_var(t, env);
                        self.define_var(t, env);
                    } else {
                        self.walk(t, env);
                    }
                }
            }

            // declarations and parameters
            (Language::Java, "local_variable_declaration" | "field_declaration")
            | (Language::Cpp, "declaration" | "field_declaration") => {
                for d in field_all(node, "declarator") {
                    self.declarator(d, env);
                }
            }
            (Language::Java, "formal_parameter" | "catch_formal_parameter" | "spread_parameter")
            | (Language::Cpp, "parameter_declaration" | "optional_parameter_declaration") => {
                self.walk_opt(node.child_by_field_name("default_value"), env);
                let target = node
                    .child_by_field_name("name")
                    .or_else(|| node.child_by_field_name("declarator"))
                    .or_else(|| {
                        children(node)
                            .into_iter()
                            .find(|c| c.kind() == "variable_declarator")
                    });
                if let Some(t) = target {
                    self.define_target(t, env);
                }
            }
            (Language::Python, "parameters" | "lambda_parameters") => {
                for p in children(node) {
                    match p.kind() {
                        "identifier" => self.define_var(p, env),
                        "default_parameter" | "typed_default_parameter" => {
                            self.walk_opt(p.child_by_field_name("value"), env);
                            if let Some(name) = p.child_by_field_name("name") {
                                self.define_target(name, env);
                            }
                        }
                        "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
                            for c in children(p) {
                                if c.kind() == "identifier" {
                                    self.define_var(c, env);
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
            (Language::Java, "inferred_parameters") => {
                for c in children(node) {
                    self.define_target(c, env);
                }
            }
            (Language::Java, "lambda_expression") | (Language::Python, "lambda") => {
                self.walk_scoped(env, |w, inner| {
                    if let Some(params) = node.child_by_field_name("parameters") {
                        if params.kind() == "identifier" {
                            w.define_var(params, inner);
                        } else {
                            w.walk(params, inner);
                        }
                    }
                    w.walk_opt(node.child_by_field_name("body"), inner);
                });
            }

            // function and class scopes
            (Language::Python, "function_definition") => {
                self.walk_scoped(env, |w, inner| {
                    w.walk_opt(node.child_by_field_name("parameters"), inner);
                    w.walk_opt(node.child_by_field_name("body"), inner);
                });
            }
            (Language::Python, "class_definition") => {
                self.walk_opt(node.child_by_field_name("superclasses"), env);
                self.walk_scoped(env, |w, inner| {
                    w.walk_opt(node.child_by_field_name("body"), inner)
                });
            }
            (Language::Java, "method_declaration" | "constructor_declaration") => {
                self.walk_scoped(env, |w, inner| {
                    w.walk_opt(node.child_by_field_name("parameters"), inner);
                    w.walk_opt(node.child_by_field_name("body"), inner);
                });
            }
            (Language::Java, "class_declaration" | "interface_declaration" | "enum_declaration"
                | "record_declaration") => {
                self.walk_scoped(env, |w, inner| {
                    w.walk_opt(node.child_by_field_name("body"), inner)
                });
            }
            (Language::Cpp, "function_definition") => {
                self.walk_scoped(env, |w, inner| {
                    if let Some(decl) = node.child_by_field_name("declarator") {
                        w.function_parameters(decl, inner);
                    }
                    w.walk_opt(node.child_by_field_name("body"), inner);
                });
            }
            (Language::Cpp, "lambda_expression") => {
                self.walk_scoped(env, |w, inner| {
                    if let Some(decl) = node.child_by_field_name("declarator") {
                        w.function_parameters(decl, inner);
                    }
                    w.walk_opt(node.child_by_field_name("body"), inner);
                });
            }

            // member access: only the receiver is a variable
            (Language::Python, "attribute") => self.walk_opt(node.child_by_field_name("object"), env),
            (Language::Python, "keyword_argument") => {
                self.walk_opt(node.child_by_field_name("value"), env)
            }
            (Language::Java, "method_invocation") => {
                self.walk_opt(node.child_by_field_name("object"), env);
                self.walk_opt(node.child_by_field_name("arguments"), env);
            }
            (Language::Java, "field_access") => {
                self.walk_opt(node.child_by_field_name("object"), env)
            }
            (Language::Java, "object_creation_expression") => {
                self.walk_opt(node.child_by_field_name("arguments"), env);
                self.walk_opt(
                    children(node).into_iter().find(|c| c.kind() == "class_body"),
                    env,
                );
            }
            (Language::Cpp, "qualified_identifier") => {}

            // control flow
            (_, "if_statement") => self.if_statement(node, env),
            (Language::Python, "for_statement")
            | (Language::Java, "enhanced_for_statement")
            | (Language::Cpp, "for_range_loop") => {
                let iterable = node
                    .child_by_field_name("right")
                    .or_else(|| node.child_by_field_name("value"));
                self.walk_opt(iterable, env);
                let target = node
                    .child_by_field_name("left")
                    .or_else(|| node.child_by_field_name("name"))
                    .or_else(|| node.child_by_field_name("declarator"));
                self.walk_loop(env, |w, e| {
                    if let Some(t) = target {
                        w.define_target(t, e);
                    }
                    w.walk_opt(node.child_by_field_name("body"), e);
                });
                self.walk_opt(node.child_by_field_name("alternative"), env);
            }
            (Language::Java | Language::Cpp, "for_statement") => {
                for init in field_all(node, "init")
                    .into_iter()
                    .chain(field_all(node, "initializer"))
                {
                    self.walk(init, env);
                }
                self.walk_loop(env, |w, e| {
                    w.walk_opt(node.child_by_field_name("condition"), e);
                    w.walk_opt(node.child_by_field_name("body"), e);
                    for u in field_all(node, "update") {
                        w.walk(u, e);
                    }
                });
            }
            (_, "while_statement" | "do_statement") => {
                self.walk_loop(env, |w, e| {
                    w.walk_opt(node.child_by_field_name("condition"), e);
                    w.walk_opt(node.child_by_field_name("body"), e);
                });
                self.walk_opt(node.child_by_field_name("alternative"), env);
            }

            // comprehensions bind their loop variables first
            (Language::Python, "list_comprehension" | "set_comprehension"
                | "dictionary_comprehension" | "generator_expression") => {
                self.walk_scoped(env, |w, inner| {
                    let all = children(node);
                    for c in &all {
                        match c.kind() {
                            "for_in_clause" => {
                                w.walk_opt(c.child_by_field_name("right"), inner);
                                if let Some(left) = c.child_by_field_name("left") {
                                    w.define_target(left, inner);
                                }
                            }
                            "if_clause" => w.walk(*c, inner),
                            _ => {}
                        }
                    }
                    w.walk_opt(node.child_by_field_name("body"), inner);
                });
            }
            (Language::Python, "as_pattern") => {
                for c in children(node) {
                    if c.kind() == "as_pattern_target" {
                        self.define_target(c, env);
                    } else {
                        self.walk(c, env);
                    }
                }
            }
            _ => self.walk_children(node, env),
        }
    }

    fn has_interpolation(&self, node: Node) -> bool {
        children(node).iter().any(|c| c.kind() == "interpolation")
    }

    fn declarator(&mut self, d: Node, env: &mut Env) {
        match d.kind() {
            "variable_declarator" | "init_declarator" => {
                self.walk_opt(d.child_by_field_name("value"), env);
                self.define_target(d, env);
            }
            "function_declarator" => {}
            _ => self.define_target(d, env),
        }
    }

    fn function_parameters(&mut self, decl: Node, env: &mut Env) {
        let mut cursor = Some(decl);
        while let Some(d) = cursor {
            if let Some(params) = d.child_by_field_name("parameters") {
                self.walk(params, env);
                return;
            }
            cursor = d.child_by_field_name("declarator");
        }
    }

    fn if_statement(&mut self, node: Node, env: &mut Env) {
        self.walk_opt(node.child_by_field_name("condition"), env);
        let entry = env.clone();
        let mut merged = entry.clone();
        self.walk_opt(node.child_by_field_name("consequence"), &mut merged);
        let alternatives = field_all(node, "alternative");
        let has_else = alternatives.iter().any(|a| a.kind() == "else_clause")
            || (self.language == Language::Java && !alternatives.is_empty());
        for alt in alternatives {
            let mut branch = entry.clone();
            self.walk(alt, &mut branch);
            merged.merge(branch);
        }
        if !has_else {
            merged.merge(entry);
        }
        *env = merged;
    }
}
