//! Symbolic regression over small arithmetic expression trees.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::{euclidean, DomainError, Problem, Program};
use crate::demes::behavior_fisher_distance;
use crate::SearchRng;

/// Constants available as leaves.
pub const CONST_POOL: [f64; 5] = [0.0, 1.0, 2.0, 0.5, -1.0];

const DIV_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Protected division: returns 1 when the denominator is near zero.
    Div,
}

impl BinOp {
    const ALL: [BinOp; 4] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if b.abs() < DIV_GUARD {
                    1.0
                } else {
                    a / b
                }
            }
        }
    }

    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Op(BinOp, Box<Node>, Box<Node>),
    Var(usize),
    /// Index into [`CONST_POOL`].
    Const(usize),
}

impl Node {
    pub fn op(op: BinOp, a: Node, b: Node) -> Node {
        Node::Op(op, Box::new(a), Box::new(b))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Op(op, a, b) => op.apply(a.eval(x), b.eval(x)),
            Node::Var(i) => x[*i],
            Node::Const(c) => CONST_POOL[*c],
        }
    }

    /// Height of the tree; a single leaf has height 0.
    pub fn height(&self) -> usize {
        match self {
            Node::Op(_, a, b) => 1 + a.height().max(b.height()),
            _ => 0,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Node::Op(_, a, b) => 1 + a.size() + b.size(),
            _ => 1,
        }
    }

    fn label(&self) -> String {
        match self {
            Node::Op(op, ..) => op.symbol().to_string(),
            Node::Var(i) => format!("x{i}"),
            Node::Const(c) => format!("c{c}"),
        }
    }

    fn visit<'a>(&'a self, depth: usize, out: &mut Vec<(&'a Node, usize)>) {
        out.push((self, depth));
        if let Node::Op(_, a, b) = self {
            a.visit(depth + 1, out);
            b.visit(depth + 1, out);
        }
    }

    /// Nodes in preorder with their depths.
    fn nodes(&self) -> Vec<(&Node, usize)> {
        let mut out = Vec::new();
        self.visit(0, &mut out);
        out
    }

    fn replace_at(&self, target: usize, counter: &mut usize, with: &Node) -> Node {
        let here = *counter;
        *counter += 1;
        if here == target {
            return with.clone();
        }
        match self {
            Node::Op(op, a, b) => {
                let a = a.replace_at(target, counter, with);
                let b = b.replace_at(target, counter, with);
                Node::op(*op, a, b)
            }
            leaf => leaf.clone(),
        }
    }

    fn preorder(&self, out: &mut String) {
        match self {
            Node::Op(op, a, b) => {
                out.push(op.symbol());
                out.push('(');
                a.preorder(out);
                out.push(',');
                b.preorder(out);
                out.push(')');
            }
            Node::Var(i) => {
                let _ = write!(out, "x{i}");
            }
            Node::Const(c) => {
                let _ = write!(out, "c{c}");
            }
        }
    }

    fn infix(&self, out: &mut String) {
        match self {
            Node::Op(op, a, b) => {
                out.push('(');
                a.infix(out);
                let _ = write!(out, " {} ", op.symbol());
                b.infix(out);
                out.push(')');
            }
            Node::Var(i) => {
                let _ = write!(out, "x{i}");
            }
            Node::Const(c) => {
                let _ = write!(out, "{}", CONST_POOL[*c]);
            }
        }
    }
}

/// An expression tree genotype.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    pub root: Node,
}

impl ExprTree {
    pub fn new(root: Node) -> Self {
        ExprTree { root }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }

    pub fn height(&self) -> usize {
        self.root.height()
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn variables(&self) -> Vec<usize> {
        let mut vars: Vec<usize> = self
            .root
            .nodes()
            .into_iter()
            .filter_map(|(n, _)| if let Node::Var(i) = n { Some(*i) } else { None })
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    /// Canonical preorder print, used as the deduplication key.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.root.preorder(&mut s);
        s
    }
}

/// Input/output pairs for regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self, DomainError> {
        if inputs.is_empty() {
            return Err(DomainError::EmptyDataset);
        }
        let width = inputs[0].len();
        if width == 0 {
            return Err(DomainError::BadDataset { row: 0, reason: "no input columns".into() });
        }
        if inputs.len() != outputs.len() {
            return Err(DomainError::BadDataset { row: inputs.len().min(outputs.len()), reason: "row count mismatch".into() });
        }
        for (row, x) in inputs.iter().enumerate() {
            if x.len() != width {
                return Err(DomainError::BadDataset { row, reason: "ragged row".into() });
            }
        }
        Ok(Dataset { inputs, outputs })
    }

    /// `f(x) = x^2 + x` sampled at x in {-1, 0, 1, 2}.
    pub fn default_quadratic() -> Self {
        let xs = [-1.0, 0.0, 1.0, 2.0];
        Dataset {
            inputs: xs.iter().map(|&x| vec![x]).collect(),
            outputs: xs.iter().map(|&x| x * x + x).collect(),
        }
    }

    /// Reads a CSV with a header row; all columns but the last are inputs.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self, DomainError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| DomainError::BadDataset { row: 0, reason: e.to_string() })?
            .clone();
        if headers.len() < 2 {
            return Err(DomainError::BadDataset { row: 0, reason: "need at least one input and one output column".into() });
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| DomainError::BadDataset { row, reason: e.to_string() })?;
            let values: Result<Vec<f64>, _> = record.iter().map(|s| s.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| DomainError::BadDataset { row, reason: e.to_string() })?;
            if values.len() != headers.len() {
                return Err(DomainError::BadDataset { row, reason: "wrong column count".into() });
            }
            let (x, y) = values.split_at(values.len() - 1);
            inputs.push(x.to_vec());
            outputs.push(y[0]);
        }
        Dataset::new(inputs, outputs)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, DomainError> {
        let file = std::fs::File::open(path)
            .map_err(|e| DomainError::BadDataset { row: 0, reason: format!("{}: {e}", path.display()) })?;
        Self::from_csv_reader(file)
    }

    pub fn n_vars(&self) -> usize {
        self.inputs[0].len()
    }
}

/// Which behavioral distance trees use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhenoKind {
    #[default]
    Euclidean,
    Fisher,
}

#[derive(Debug, Clone)]
pub struct SymReg {
    dataset: Dataset,
    max_depth: usize,
    allowed_vars: Vec<usize>,
    pheno: PhenoKind,
    target: Option<f64>,
}

impl SymReg {
    pub fn new(dataset: Dataset, max_depth: usize) -> Self {
        let allowed_vars = (0..dataset.n_vars()).collect();
        SymReg { dataset, max_depth: max_depth.max(1), allowed_vars, pheno: PhenoKind::Euclidean, target: Some(-1e-9) }
    }

    pub fn with_pheno(mut self, pheno: PhenoKind) -> Self {
        self.pheno = pheno;
        self
    }

    pub fn with_target(mut self, target: Option<f64>) -> Self {
        self.target = target;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Negated mean squared error over the dataset, or `-inf` if any
    /// prediction is not finite.
    pub fn score_tree(&self, tree: &ExprTree) -> Result<f64, DomainError> {
        let mut sse = 0.0;
        for (x, y) in self.dataset.inputs.iter().zip(&self.dataset.outputs) {
            let pred = tree.eval(x);
            if !pred.is_finite() {
                return Err(DomainError::NonFiniteOutput);
            }
            sse += (pred - y).powi(2);
        }
        let mse = sse / self.dataset.outputs.len() as f64;
        if mse.is_finite() {
            Ok(-mse)
        } else {
            Err(DomainError::NonFiniteOutput)
        }
    }

    fn n_labels(&self) -> u32 {
        (1 + BinOp::ALL.len() + self.dataset.n_vars() + CONST_POOL.len()) as u32
    }

    fn label_code(&self, node: &Node) -> u32 {
        match node {
            Node::Op(op, ..) => 1 + BinOp::ALL.iter().position(|o| o == op).unwrap() as u32,
            Node::Var(i) => (1 + BinOp::ALL.len() + i) as u32,
            Node::Const(c) => (1 + BinOp::ALL.len() + self.dataset.n_vars() + c) as u32,
        }
    }

    fn random_leaf(&self, rng: &mut SearchRng) -> Node {
        if rng.random_bool(0.5) {
            Node::Var(self.allowed_vars[rng.random_range(0..self.allowed_vars.len())])
        } else {
            Node::Const(rng.random_range(0..CONST_POOL.len()))
        }
    }

    fn grow(&self, depth_left: usize, rng: &mut SearchRng) -> Node {
        if depth_left == 0 || rng.random_bool(0.4) {
            self.random_leaf(rng)
        } else {
            let op = BinOp::ALL[rng.random_range(0..BinOp::ALL.len())];
            Node::op(op, self.grow(depth_left - 1, rng), self.grow(depth_left - 1, rng))
        }
    }

    fn positions(&self) -> usize {
        (1usize << (self.max_depth + 1)) - 1
    }

    fn fill_loci(&self, node: &Node, pos: usize, loci: &mut [u32]) {
        if pos >= loci.len() {
            return;
        }
        loci[pos] = self.label_code(node);
        if let Node::Op(_, a, b) = node {
            self.fill_loci(a, 2 * pos + 1, loci);
            self.fill_loci(b, 2 * pos + 2, loci);
        }
    }

    fn build_from_loci(&self, loci: &[u32], pos: usize, depth: usize, rng: &mut SearchRng) -> Node {
        let code = loci.get(pos).copied().unwrap_or(0) as usize;
        let n_ops = BinOp::ALL.len();
        let n_vars = self.dataset.n_vars();
        if (1..=n_ops).contains(&code) && depth < self.max_depth {
            let a = self.build_from_loci(loci, 2 * pos + 1, depth + 1, rng);
            let b = self.build_from_loci(loci, 2 * pos + 2, depth + 1, rng);
            return Node::op(BinOp::ALL[code - 1], a, b);
        }
        let var_start = 1 + n_ops;
        let const_start = var_start + n_vars;
        if (var_start..const_start).contains(&code) && self.allowed_vars.contains(&(code - var_start)) {
            return Node::Var(code - var_start);
        }
        if code >= const_start && code - const_start < CONST_POOL.len() {
            return Node::Const(code - const_start);
        }
        self.random_leaf(rng)
    }

    fn repair_vars(&self, node: &Node, rng: &mut SearchRng) -> Node {
        match node {
            Node::Op(op, a, b) => Node::op(*op, self.repair_vars(a, rng), self.repair_vars(b, rng)),
            Node::Var(i) if !self.allowed_vars.contains(i) => {
                Node::Var(self.allowed_vars[rng.random_range(0..self.allowed_vars.len())])
            }
            leaf => leaf.clone(),
        }
    }

    fn mutate_node(&self, node: &Node, depth: usize, rate: f64, rng: &mut SearchRng) -> Node {
        if rng.random::<f64>() < rate {
            return self.grow(self.max_depth - depth, rng);
        }
        match node {
            Node::Op(op, a, b) => Node::op(
                *op,
                self.mutate_node(a, depth + 1, rate, rng),
                self.mutate_node(b, depth + 1, rate, rng),
            ),
            leaf => leaf.clone(),
        }
    }
}

/// Structural distance in [0, 1]: the mean of a label-multiset mismatch term
/// and half the L1 distance between normalized depth profiles.
pub(crate) fn tree_distance(a: &ExprTree, b: &ExprTree) -> f64 {
    let na = a.root.nodes();
    let nb = b.root.nodes();
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (n, _) in &na {
        counts.entry(n.label()).or_default().0 += 1;
    }
    for (n, _) in &nb {
        counts.entry(n.label()).or_default().1 += 1;
    }
    let shared: usize = counts.values().map(|(x, y)| (*x).min(*y)).sum();
    let label_term = 1.0 - shared as f64 / na.len().max(nb.len()) as f64;

    let max_depth = na.iter().chain(&nb).map(|(_, d)| *d).max().unwrap_or(0);
    let mut pa = vec![0.0; max_depth + 1];
    let mut pb = vec![0.0; max_depth + 1];
    for (_, d) in &na {
        pa[*d] += 1.0 / na.len() as f64;
    }
    for (_, d) in &nb {
        pb[*d] += 1.0 / nb.len() as f64;
    }
    let depth_term = 0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>();
    0.5 * (label_term + depth_term)
}

impl Problem for SymReg {
    type Genotype = ExprTree;

    fn name(&self) -> &str {
        "symreg"
    }

    fn input_arity(&self) -> usize {
        self.dataset.n_vars()
    }

    fn score(&self, g: &ExprTree) -> f64 {
        self.score_tree(g).unwrap_or(f64::NEG_INFINITY)
    }

    fn target(&self) -> Option<f64> {
        self.target
    }

    fn random_genotype(&self, rng: &mut SearchRng) -> ExprTree {
        let depth = rng.random_range(1..=self.max_depth);
        ExprTree::new(self.grow(depth, rng))
    }

    fn mutate(&self, g: &ExprTree, rate: f64, rng: &mut SearchRng) -> ExprTree {
        if rate <= 0.0 {
            return g.clone();
        }
        ExprTree::new(self.mutate_node(&g.root, 0, rate, rng))
    }

    /// Subtree crossover: a random subtree of `b` replaces a random subtree of
    /// `a` when the result fits the depth limit; otherwise `a` is returned.
    fn crossover(&self, a: &ExprTree, b: &ExprTree, rng: &mut SearchRng) -> ExprTree {
        let na = a.root.nodes();
        let nb = b.root.nodes();
        for _ in 0..8 {
            let ia = rng.random_range(0..na.len());
            let (donor, _) = nb[rng.random_range(0..nb.len())];
            if na[ia].1 + donor.height() <= self.max_depth {
                let mut counter = 0;
                return ExprTree::new(a.root.replace_at(ia, &mut counter, donor));
            }
        }
        a.clone()
    }

    fn default_mutation_rate(&self) -> f64 {
        0.1
    }

    /// One locus per slot of the complete binary tree of height `max_depth`,
    /// holding 0 for an empty slot or a node label code.
    fn loci(&self, g: &ExprTree) -> Vec<u32> {
        let mut loci = vec![0; self.positions()];
        self.fill_loci(&g.root, 0, &mut loci);
        loci
    }

    fn locus_cardinality(&self) -> Vec<u32> {
        vec![self.n_labels(); self.positions()]
    }

    fn from_loci(&self, loci: &[u32], rng: &mut SearchRng) -> ExprTree {
        ExprTree::new(self.build_from_loci(loci, 0, 0, rng))
    }

    fn d_geno(&self, a: &ExprTree, b: &ExprTree) -> f64 {
        tree_distance(a, b)
    }

    fn d_pheno(&self, a: &ExprTree, b: &ExprTree) -> f64 {
        let oa = self.outputs(a, &self.dataset.inputs);
        let ob = self.outputs(b, &self.dataset.inputs);
        if oa.iter().chain(&ob).any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        match self.pheno {
            PhenoKind::Euclidean => euclidean(&oa, &ob),
            PhenoKind::Fisher => behavior_fisher_distance(&oa, &ob).unwrap_or(f64::INFINITY),
        }
    }

    fn key(&self, g: &ExprTree) -> Vec<u8> {
        g.canonical().into_bytes()
    }

    fn render(&self, g: &ExprTree) -> String {
        let mut s = String::new();
        g.root.infix(&mut s);
        s
    }

    fn restrict(&self, features: &[usize], _exemplar: &ExprTree) -> Self {
        SymReg { allowed_vars: features.to_vec(), ..self.clone() }
    }

    fn conform(&self, g: &ExprTree, features: &[usize], rng: &mut SearchRng) -> ExprTree {
        let scoped = SymReg { allowed_vars: features.to_vec(), ..self.clone() };
        ExprTree::new(scoped.repair_vars(&g.root, rng))
    }
}

impl Program for SymReg {
    fn outputs(&self, g: &ExprTree, probes: &[Vec<f64>]) -> Vec<f64> {
        probes.iter().map(|x| g.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn x() -> Node {
        Node::Var(0)
    }

    fn quadratic() -> ExprTree {
        ExprTree::new(Node::op(BinOp::Add, Node::op(BinOp::Mul, x(), x()), x()))
    }

    #[test]
    fn exact_tree_scores_zero() {
        let p = SymReg::new(Dataset::default_quadratic(), 5);
        assert_eq!(p.dataset().outputs, vec![0.0, 0.0, 2.0, 6.0]);
        assert_eq!(p.score(&quadratic()), 0.0);
    }

    #[test]
    fn constant_zero_scores_minus_ten() {
        let p = SymReg::new(Dataset::default_quadratic(), 5);
        assert_eq!(p.score(&ExprTree::new(Node::Const(0))), -10.0);
    }

    #[test]
    fn protected_division() {
        let p = SymReg::new(Dataset::default_quadratic(), 5);
        let t = ExprTree::new(Node::op(BinOp::Div, x(), Node::Const(0)));
        assert_eq!(p.outputs(&t, &p.dataset().inputs), vec![1.0; 4]);
        assert!(p.score(&t).is_finite());
    }

    #[test]
    fn phenotypic_distance_examples() {
        let p = SymReg::new(Dataset::default_quadratic(), 5);
        let double = ExprTree::new(Node::op(BinOp::Add, x(), x()));
        let double2 = ExprTree::new(Node::op(BinOp::Mul, Node::Const(2), x()));
        assert_eq!(p.d_pheno(&double, &double2), 0.0);
        assert_ne!(p.d_geno(&double, &double2), 0.0);
        let zero = ExprTree::new(Node::Const(0));
        assert_eq!(p.d_pheno(&quadratic(), &zero), 40f64.sqrt());
        let fisher = p.clone().with_pheno(PhenoKind::Fisher);
        assert_eq!(fisher.d_pheno(&double, &double2), 0.0);
    }

    #[test]
    fn tree_distance_boundaries() {
        let a = ExprTree::new(Node::Var(0));
        let b = ExprTree::new(Node::Const(1));
        assert_eq!(tree_distance(&a, &a), 0.0);
        // disjoint labels, identical depth profile
        assert_eq!(tree_distance(&a, &b), 0.5);
        let q = quadratic();
        assert_eq!(tree_distance(&q, &q), 0.0);
    }

    #[test]
    fn csv_dataset_loading() {
        let text = "x0,x1,y\n1,2,3\n4,5,9\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.inputs, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
        assert_eq!(d.outputs, vec![3.0, 9.0]);
        assert!(Dataset::from_csv_reader("x,y\n".as_bytes()).is_err());
        assert!(matches!(
            Dataset::from_csv_reader("x,y\n1,a\n".as_bytes()),
            Err(DomainError::BadDataset { row: 1, .. })
        ));
    }

    #[test]
    fn loci_round_trip() {
        let p = SymReg::new(Dataset::default_quadratic(), 4);
        let mut rng = SearchRng::seed_from_u64(2);
        for _ in 0..200 {
            let t = p.random_genotype(&mut rng);
            let back = p.from_loci(&p.loci(&t), &mut rng);
            assert_eq!(back, t);
        }
    }

    #[test]
    fn restriction_limits_variables() {
        let data = Dataset::new(vec![vec![1.0, 2.0, 3.0]], vec![1.0]).unwrap();
        let p = SymReg::new(data, 4);
        let mut rng = SearchRng::seed_from_u64(8);
        let ex = p.conform(&p.random_genotype(&mut rng), &[1], &mut rng);
        assert!(ex.variables().iter().all(|&v| v == 1));
        let r = p.restrict(&[1], &ex);
        for _ in 0..100 {
            let t = r.mutate(&r.random_genotype(&mut rng), 0.3, &mut rng);
            assert!(t.variables().iter().all(|&v| v == 1));
        }
    }

    proptest! {
        #[test]
        fn variation_preserves_depth_bound(seed in any::<u64>(), depth in 1usize..6) {
            let p = SymReg::new(Dataset::default_quadratic(), depth);
            let mut rng = SearchRng::seed_from_u64(seed);
            let a = p.random_genotype(&mut rng);
            let b = p.random_genotype(&mut rng);
            prop_assert!(a.height() <= depth);
            prop_assert!(p.mutate(&a, 0.5, &mut rng).height() <= depth);
            prop_assert!(p.crossover(&a, &b, &mut rng).height() <= depth);
            let loci: Vec<u32> = p.locus_cardinality().iter().map(|&c| rng.random_range(0..c)).collect();
            prop_assert!(p.from_loci(&loci, &mut rng).height() <= depth);
        }

        #[test]
        fn distances_are_symmetric(seed in any::<u64>()) {
            let p = SymReg::new(Dataset::default_quadratic(), 4);
            let mut rng = SearchRng::seed_from_u64(seed);
            let a = p.random_genotype(&mut rng);
            let b = p.random_genotype(&mut rng);
            prop_assert_eq!(p.d_geno(&a, &b), p.d_geno(&b, &a));
            prop_assert!((0.0..=1.0).contains(&p.d_geno(&a, &b)));
            prop_assert_eq!(p.d_pheno(&a, &b), p.d_pheno(&b, &a));
            prop_assert_eq!(p.d_geno(&a, &a), 0.0);
        }
    }
}
