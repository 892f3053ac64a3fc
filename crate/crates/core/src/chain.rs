//! Locally finite Markov kernels on countable spaces, the catalog of recurrent
//! chains, exact distribution propagation and path records with local times.

use crate::error::{config, resource, Result};
use crate::exact::{q, to_f64, Q};
use num_traits::{One, Zero};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::{Add, Mul};

/// Node of the binary tree: the first `depth` bits of `bits`, bit i holding the
/// (i+1)-th letter. The root ∅ has depth 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node {
    depth: u8,
    bits: u128,
}

impl Node {
    pub const MAX_DEPTH: usize = 127;

    pub fn root() -> Node {
        Node { depth: 0, bits: 0 }
    }

    pub fn from_letters(letters: &[u8]) -> Node {
        assert!(letters.len() <= Self::MAX_DEPTH, "tree node too deep");
        let mut n = Node::root();
        for &b in letters {
            n = n.child(b);
        }
        n
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }

    /// Letter at 0-based position i < depth.
    pub fn letter(&self, i: usize) -> u8 {
        debug_assert!(i < self.depth());
        ((self.bits >> i) & 1) as u8
    }

    pub fn letters(&self) -> Vec<u8> {
        (0..self.depth()).map(|i| self.letter(i)).collect()
    }

    pub fn child(&self, b: u8) -> Node {
        assert!(self.depth() < Self::MAX_DEPTH, "tree node too deep");
        Node {
            depth: self.depth + 1,
            bits: self.bits | ((b as u128 & 1) << self.depth),
        }
    }

    pub fn parent(&self) -> Option<Node> {
        if self.depth == 0 {
            return None;
        }
        let d = self.depth - 1;
        Some(Node {
            depth: d,
            bits: self.bits & ((1u128 << d) - 1),
        })
    }

    /// Depth of the deepest common ancestor.
    pub fn meet_depth(&self, other: &Node) -> usize {
        let m = self.depth.min(other.depth) as u32;
        let diff = (self.bits ^ other.bits).trailing_zeros();
        diff.min(m) as usize
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.depth == 0 {
            return write!(f, "∅");
        }
        let s: Vec<String> = self.letters().iter().map(|b| b.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

/// A point of one of the four state spaces. Ordering and hashing are total
/// within each space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Z(i64),
    Z2(i64, i64),
    Tree(Node),
    N(u64),
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Z(x) => write!(f, "{x}"),
            State::Z2(x, y) => write!(f, "({x},{y})"),
            State::Tree(n) => write!(f, "{n}"),
            State::N(x) => write!(f, "{x}"),
        }
    }
}

/// A locally finite transition kernel with exact rational probabilities.
///
/// Implementors guarantee that `neighbors` is finite and sums to one at every
/// state of the space, and that the graph is connected from `origin`.
pub trait MarkovKernel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn origin(&self) -> State;

    fn contains(&self, s: &State) -> bool;

    fn neighbors(&self, s: &State) -> Vec<(State, Q)>;

    fn neighbors_f64(&self, s: &State) -> Vec<(State, f64)> {
        self.neighbors(s)
            .into_iter()
            .map(|(z, p)| (z, to_f64(&p)))
            .collect()
    }

    /// P_from(X_k = to) for k = 0..=n when a closed form is available.
    fn point_probabilities(&self, _from: &State, _to: &State, _n: usize) -> Option<Vec<f64>> {
        None
    }

    /// The first `size` states met by breadth-first search from `origin`.
    fn window(&self, size: usize) -> Vec<State> {
        bfs_ball(self, &self.origin(), size)
    }
}

/// The first `size` states reached by breadth-first search from `center`.
pub fn bfs_ball<K: MarkovKernel + ?Sized>(kernel: &K, center: &State, size: usize) -> Vec<State> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    let mut queue = VecDeque::new();
    seen.insert(*center);
    queue.push_back(*center);
    while let Some(s) = queue.pop_front() {
        if out.len() == size {
            break;
        }
        out.push(s);
        for (z, _) in kernel.neighbors(&s) {
            if seen.insert(z) {
                queue.push_back(z);
            }
        }
    }
    out
}

/// The catalog of recurrent chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Catalog {
    /// Simple random walk on Z. Recurrent (Pólya).
    SrwZ,
    /// Walk on N reflected at 0 with p(0,1) = 1 and, off 0, up 1/3, down 2/3.
    /// Positive recurrent: the drift points to the origin.
    BangBang,
    /// Walk on the binary tree: parent 1/2, each child 1/4, root to each child
    /// 1/2. The depth is a reflected simple random walk, hence recurrent.
    BinaryTree,
    /// Simple random walk on Z². Recurrent (Pólya).
    SrwZ2,
}

impl Catalog {
    pub const NAMES: [&'static str; 4] = ["srw_z", "bang_bang", "binary_tree", "srw_z2"];

    pub fn all() -> [Catalog; 4] {
        [
            Catalog::SrwZ,
            Catalog::BangBang,
            Catalog::BinaryTree,
            Catalog::SrwZ2,
        ]
    }

    pub fn id(&self) -> &'static str {
        match self {
            Catalog::SrwZ => "srw_z",
            Catalog::BangBang => "bang_bang",
            Catalog::BinaryTree => "binary_tree",
            Catalog::SrwZ2 => "srw_z2",
        }
    }
}

pub fn catalog(name: &str) -> Result<Catalog> {
    match name {
        "srw_z" => Ok(Catalog::SrwZ),
        "bang_bang" => Ok(Catalog::BangBang),
        "binary_tree" => Ok(Catalog::BinaryTree),
        "srw_z2" => Ok(Catalog::SrwZ2),
        other => config(format!(
            "unknown chain '{other}' (expected one of {})",
            Catalog::NAMES.join(", ")
        )),
    }
}

impl MarkovKernel for Catalog {
    fn name(&self) -> String {
        self.id().to_string()
    }

    fn origin(&self) -> State {
        match self {
            Catalog::SrwZ => State::Z(0),
            Catalog::BangBang => State::N(0),
            Catalog::BinaryTree => State::Tree(Node::root()),
            Catalog::SrwZ2 => State::Z2(0, 0),
        }
    }

    fn contains(&self, s: &State) -> bool {
        matches!(
            (self, s),
            (Catalog::SrwZ, State::Z(_))
                | (Catalog::BangBang, State::N(_))
                | (Catalog::BinaryTree, State::Tree(_))
                | (Catalog::SrwZ2, State::Z2(..))
        )
    }

    fn neighbors(&self, s: &State) -> Vec<(State, Q)> {
        match (self, s) {
            (Catalog::SrwZ, State::Z(x)) => {
                vec![(State::Z(x - 1), q(1, 2)), (State::Z(x + 1), q(1, 2))]
            }
            (Catalog::BangBang, State::N(0)) => vec![(State::N(1), Q::one())],
            (Catalog::BangBang, State::N(y)) => {
                vec![(State::N(y - 1), q(2, 3)), (State::N(y + 1), q(1, 3))]
            }
            (Catalog::BinaryTree, State::Tree(n)) => match n.parent() {
                None => vec![
                    (State::Tree(n.child(0)), q(1, 2)),
                    (State::Tree(n.child(1)), q(1, 2)),
                ],
                Some(p) => vec![
                    (State::Tree(p), q(1, 2)),
                    (State::Tree(n.child(0)), q(1, 4)),
                    (State::Tree(n.child(1)), q(1, 4)),
                ],
            },
            (Catalog::SrwZ2, State::Z2(x, y)) => vec![
                (State::Z2(x - 1, *y), q(1, 4)),
                (State::Z2(x + 1, *y), q(1, 4)),
                (State::Z2(*x, y - 1), q(1, 4)),
                (State::Z2(*x, y + 1), q(1, 4)),
            ],
            _ => panic!("state {s} is not in the space of {}", self.id()),
        }
    }

    fn point_probabilities(&self, from: &State, to: &State, n: usize) -> Option<Vec<f64>> {
        match (self, from, to) {
            (Catalog::SrwZ, State::Z(a), State::Z(b)) => {
                Some(srw_point_probabilities((a - b).unsigned_abs(), n))
            }
            (Catalog::SrwZ2, State::Z2(a, b), State::Z2(c, d)) => {
                // u = x+y and v = x-y perform independent ±1 walks.
                let (dx, dy) = (a - c, b - d);
                let pu = srw_point_probabilities((dx + dy).unsigned_abs(), n);
                let pv = srw_point_probabilities((dx - dy).unsigned_abs(), n);
                Some(pu.iter().zip(&pv).map(|(x, y)| x * y).collect())
            }
            (Catalog::BinaryTree, State::Tree(a), State::Tree(b)) if b.depth() == 0 => {
                Some(tree_root_probabilities(a.depth(), n))
            }
            _ => None,
        }
    }
}

/// P(X_k = root) on the binary tree from depth d: the depth is the walk on N
/// reflected at 0 with symmetric steps off 0.
fn tree_root_probabilities(d: usize, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n + d + 2];
    p[d] = 1.0;
    let mut out = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        out.push(p[0]);
        let mut next = vec![0.0; p.len()];
        next[1] += p[0];
        for j in 1..p.len() - 1 {
            next[j - 1] += 0.5 * p[j];
            next[j + 1] += 0.5 * p[j];
        }
        p = next;
    }
    out
}

/// P(S_k = d) for the simple ±1 walk from 0, k = 0..=n.
pub fn srw_point_probabilities(d: u64, n: usize) -> Vec<f64> {
    // central[k] = P(S_k = 0) for even k, via C(k+2,(k+2)/2)/2^(k+2) = C(k,k/2)/2^k · (k+1)/(k+2).
    let mut central = vec![0.0; n + 2];
    central[0] = 1.0;
    let mut k = 0;
    while k + 2 <= n + 1 {
        central[k + 2] = central[k] * (k as f64 + 1.0) / (k as f64 + 2.0);
        k += 2;
    }
    (0..=n)
        .map(|k| {
            let k64 = k as u64;
            if d > k64 || (k64 + d) % 2 == 1 {
                return 0.0;
            }
            // P(S_k = 1) = P(S_{k+1} = 0) for odd k.
            let (mut s, mut p) = if k % 2 == 0 {
                (0u64, central[k])
            } else {
                (1u64, central[k + 1])
            };
            while s < d {
                let j = (k64 + s) / 2;
                p *= (k64 - j) as f64 / (j + 1) as f64;
                s += 2;
            }
            p
        })
        .collect()
}

/// One transition drawn with the kernel's probabilities.
pub fn step<K: MarkovKernel + ?Sized, R: Rng + ?Sized>(
    kernel: &K,
    state: &State,
    rng: &mut R,
) -> State {
    let nb = kernel.neighbors_f64(state);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (z, p) in &nb {
        acc += p;
        if u < acc {
            return *z;
        }
    }
    nb.last().expect("kernel row is empty").0
}

/// Depth-first enumeration of every n-step path from x; `visit` receives each
/// complete path and its probability.
pub fn for_each_path<K, F>(
    kernel: &K,
    x: State,
    n: usize,
    tracked: &[State],
    budget: usize,
    mut visit: F,
) -> Result<usize>
where
    K: MarkovKernel + ?Sized,
    F: FnMut(&PathRecord, &Q),
{
    fn rec<K: MarkovKernel + ?Sized, F: FnMut(&PathRecord, &Q)>(
        kernel: &K,
        path: &mut PathRecord,
        prob: &Q,
        left: usize,
        leaves: &mut usize,
        budget: usize,
        visit: &mut F,
    ) -> Result<()> {
        if left == 0 {
            *leaves += 1;
            if *leaves > budget {
                return resource("enumerated paths", budget);
            }
            visit(path, prob);
            return Ok(());
        }
        for (z, p) in kernel.neighbors(&path.last()) {
            path.push(z);
            rec(kernel, path, &(prob * &p), left - 1, leaves, budget, visit)?;
            path.pop();
        }
        Ok(())
    }
    let mut path = PathRecord::new(x, tracked);
    let mut leaves = 0;
    rec(
        kernel,
        &mut path,
        &Q::one(),
        n,
        &mut leaves,
        budget,
        &mut visit,
    )?;
    Ok(leaves)
}

/// Scalar used for masses: exact rationals or floats.
pub trait Weight:
    Clone + Zero + Add<Output = Self> + Mul<Output = Self> + Send + Sync + fmt::Debug
{
    fn from_prob(p: &Q) -> Self;
}

impl Weight for Q {
    fn from_prob(p: &Q) -> Self {
        p.clone()
    }
}

impl Weight for f64 {
    fn from_prob(p: &Q) -> Self {
        to_f64(p)
    }
}

/// Finitely supported mass on augmented states (X_k, counters).
///
/// The counters are the local times *before* the current step: entry j holds
/// #{m < k : X_m = y_j}, that is L_{k-1}^{y_j}.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedDistribution<W> {
    mass: BTreeMap<(State, Vec<u32>), W>,
}

impl<W: Weight> AugmentedDistribution<W> {
    pub fn empty() -> Self {
        AugmentedDistribution {
            mass: BTreeMap::new(),
        }
    }

    pub fn delta(s: State, tracked: usize) -> Self {
        let mut d = Self::empty();
        d.add(s, vec![0; tracked], W::from_prob(&Q::one()));
        d
    }

    pub fn add(&mut self, s: State, counters: Vec<u32>, w: W) {
        let slot = self.mass.entry((s, counters)).or_insert_with(W::zero);
        *slot = slot.clone() + w;
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&State, &[u32], &W)> {
        self.mass.iter().map(|((s, c), w)| (s, c.as_slice(), w))
    }

    pub fn total(&self) -> W {
        self.mass.values().fold(W::zero(), |a, w| a + w.clone())
    }

    /// Mass by state, counters summed out.
    pub fn marginal(&self) -> BTreeMap<State, W> {
        let mut out: BTreeMap<State, W> = BTreeMap::new();
        for ((s, _), w) in &self.mass {
            let slot = out.entry(*s).or_insert_with(W::zero);
            *slot = slot.clone() + w.clone();
        }
        out
    }

    /// Σ w · f(state, counters).
    pub fn expect<F: Fn(&State, &[u32]) -> W>(&self, f: F) -> W {
        self.iter()
            .fold(W::zero(), |acc, (s, c, w)| acc + w.clone() * f(s, c))
    }
}

/// Exact n-step pushforward of `dist`, counters tracking visits to `tracked`.
pub fn propagate<K: MarkovKernel + ?Sized, W: Weight>(
    kernel: &K,
    dist: &AugmentedDistribution<W>,
    n: usize,
    tracked: &[State],
    budget: usize,
) -> Result<AugmentedDistribution<W>> {
    let mut cur = dist.clone();
    let mut row_cache: BTreeMap<State, Vec<(State, W)>> = BTreeMap::new();
    for _ in 0..n {
        let mut next = AugmentedDistribution::empty();
        for ((s, c), w) in &cur.mass {
            let mut c2 = c.clone();
            for (j, y) in tracked.iter().enumerate() {
                if y == s {
                    c2[j] += 1;
                }
            }
            let row = row_cache.entry(*s).or_insert_with(|| {
                kernel
                    .neighbors(s)
                    .iter()
                    .map(|(z, p)| (*z, W::from_prob(p)))
                    .collect()
            });
            for (z, p) in row.iter() {
                next.add(*z, c2.clone(), w.clone() * p.clone());
            }
        }
        if next.len() > budget {
            return resource("propagation support size", budget);
        }
        cur = next;
    }
    Ok(cur)
}

/// A finite trajectory X_0..X_n with local times, hitting times and last visits
/// at a list of tracked sites.
///
/// Hitting times follow the counting convention τ_k^{(y)} = inf{m ≥ 0 : L_m^y = k}:
/// a path started at y has τ_1^{(y)} = 0 and its first return is τ_2^{(y)}. With
/// this convention {L_∞^y = k} is exactly the set of paths that stop visiting y
/// after τ_k^{(y)}.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    states: Vec<State>,
    tracked: Vec<State>,
    // Row k holds L_k^{y_j} for every tracked j.
    local: Vec<u32>,
    hits: Vec<Vec<usize>>,
}

impl PathRecord {
    pub fn new(x0: State, tracked: &[State]) -> Self {
        let mut p = PathRecord {
            states: Vec::new(),
            tracked: tracked.to_vec(),
            local: Vec::new(),
            hits: vec![Vec::new(); tracked.len()],
        };
        p.push(x0);
        p
    }

    pub fn push(&mut self, s: State) {
        let k = self.states.len();
        let m = self.tracked.len();
        for j in 0..m {
            let prev = if k == 0 {
                0
            } else {
                self.local[(k - 1) * m + j]
            };
            let hit = self.tracked[j] == s;
            self.local.push(prev + hit as u32);
            if hit {
                self.hits[j].push(k);
            }
        }
        self.states.push(s);
    }

    /// Removes the last state; the initial state is never removed.
    pub fn pop(&mut self) -> Option<State> {
        if self.states.len() <= 1 {
            return None;
        }
        let s = self.states.pop()?;
        let k = self.states.len();
        let m = self.tracked.len();
        self.local.truncate(k * m);
        for j in 0..m {
            if self.tracked[j] == s {
                self.hits[j].pop();
            }
        }
        Some(s)
    }

    /// Number of steps n.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, k: usize) -> State {
        self.states[k]
    }

    pub fn last(&self) -> State {
        *self.states.last().expect("path is never empty")
    }

    pub fn tracked(&self) -> &[State] {
        &self.tracked
    }

    /// L_k^{y_j}, with L_{-1} = 0.
    pub fn local_time(&self, j: usize, k: isize) -> u32 {
        if k < 0 {
            return 0;
        }
        self.local[k as usize * self.tracked.len() + j]
    }

    /// L_{n-1}^{y_j}: visits strictly before the current time.
    pub fn local_time_before(&self, j: usize) -> u32 {
        self.local_time(j, self.steps() as isize - 1)
    }

    /// τ_k^{(y_j)} for k ≥ 1, if it has happened.
    pub fn hitting_time(&self, j: usize, k: usize) -> Option<usize> {
        if k == 0 {
            return None;
        }
        self.hits[j].get(k - 1).copied()
    }

    /// Last visit g_{y_j}^{(n)}, or None for "never".
    pub fn last_visit(&self, j: usize) -> Option<usize> {
        self.hits[j].last().copied()
    }

    /// L_k^{y_j} recomputed from the state sequence.
    pub fn recount_local_time(&self, j: usize, k: usize) -> u32 {
        self.states[..=k]
            .iter()
            .filter(|s| **s == self.tracked[j])
            .count() as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::qi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn catalog_rows() {
        let z = catalog("srw_z").unwrap();
        assert_eq!(
            z.neighbors(&State::Z(3)),
            vec![(State::Z(2), q(1, 2)), (State::Z(4), q(1, 2))]
        );
        let b = catalog("bang_bang").unwrap();
        assert_eq!(b.neighbors(&State::N(0)), vec![(State::N(1), qi(1))]);
        assert_eq!(
            b.neighbors(&State::N(4)),
            vec![(State::N(3), q(2, 3)), (State::N(5), q(1, 3))]
        );
        let t = catalog("binary_tree").unwrap();
        let n01 = Node::from_letters(&[0, 1]);
        let row = t.neighbors(&State::Tree(n01));
        assert_eq!(row[0], (State::Tree(Node::from_letters(&[0])), q(1, 2)));
        assert_eq!(
            row[1],
            (State::Tree(Node::from_letters(&[0, 1, 0])), q(1, 4))
        );
        assert_eq!(
            row[2],
            (State::Tree(Node::from_letters(&[0, 1, 1])), q(1, 4))
        );
        assert_eq!(t.neighbors(&t.origin()).len(), 2);
        assert!(catalog("bogus").is_err());
    }

    #[test]
    fn node_geometry() {
        let a = Node::from_letters(&[0, 1, 1]);
        let b = Node::from_letters(&[0, 1, 0, 0]);
        assert_eq!(a.meet_depth(&b), 2);
        assert_eq!(a.meet_depth(&a), 3);
        assert_eq!(a.parent().unwrap().letters(), vec![0, 1]);
        assert_eq!(format!("{}", State::Tree(a)), "(0,1,1)");
        assert_eq!(format!("{}", State::Tree(Node::root())), "∅");
    }

    #[test]
    fn step_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Catalog::BangBang;
        for _ in 0..100 {
            assert_eq!(step(&b, &State::N(0), &mut rng), State::N(1));
            let s = step(&Catalog::SrwZ, &State::Z(5), &mut rng);
            assert!(s == State::Z(4) || s == State::Z(6));
        }
    }

    #[test]
    fn propagate_examples() {
        let d0 = AugmentedDistribution::<Q>::delta(State::Z(0), 0);
        let d2 = propagate(&Catalog::SrwZ, &d0, 2, &[], 100).unwrap();
        let m = d2.marginal();
        assert_eq!(m[&State::Z(-2)], q(1, 4));
        assert_eq!(m[&State::Z(0)], q(1, 2));
        assert_eq!(m[&State::Z(2)], q(1, 4));
        assert_eq!(propagate(&Catalog::SrwZ, &d0, 0, &[], 1).unwrap(), d0);

        let b0 = AugmentedDistribution::<Q>::delta(State::N(0), 0);
        let m = propagate(&Catalog::BangBang, &b0, 2, &[], 100)
            .unwrap()
            .marginal();
        assert_eq!(m.len(), 2);
        assert_eq!(m[&State::N(0)], q(2, 3));
        assert_eq!(m[&State::N(2)], q(1, 3));
    }

    #[test]
    fn propagate_budget() {
        let d0 = AugmentedDistribution::<Q>::delta(State::Z2(0, 0), 0);
        match propagate(&Catalog::SrwZ2, &d0, 10, &[], 20) {
            Err(crate::Error::Resource { budget, .. }) => assert_eq!(budget, 20),
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn counters_hold_local_time_before_current_step() {
        let d0 = AugmentedDistribution::<Q>::delta(State::N(0), 1);
        let d = propagate(&Catalog::BangBang, &d0, 2, &[State::N(0)], 100).unwrap();
        for (s, c, w) in d.iter() {
            // Path 0→1→0 has L_1 = 1; path 0→1→2 too.
            assert_eq!(c, &[1]);
            assert!(*s == State::N(0) || *s == State::N(2), "{s} {w}");
        }
    }

    #[test]
    fn point_probabilities_match_propagation() {
        for (k, from, to) in [
            (Catalog::SrwZ, State::Z(3), State::Z(0)),
            (Catalog::SrwZ2, State::Z2(1, 0), State::Z2(0, 0)),
            (Catalog::SrwZ2, State::Z2(2, -1), State::Z2(0, 0)),
            (
                Catalog::BinaryTree,
                State::Tree(Node::from_letters(&[1, 0])),
                State::Tree(Node::root()),
            ),
        ] {
            let closed = k.point_probabilities(&from, &to, 12).unwrap();
            let mut d = AugmentedDistribution::<Q>::delta(from, 0);
            for (n, c) in closed.iter().enumerate() {
                let exact = d.marginal().get(&to).cloned().unwrap_or_else(Q::zero);
                assert!((to_f64(&exact) - c).abs() < 1e-15, "k={n}");
                d = propagate(&k, &d, 1, &[], 1 << 20).unwrap();
            }
        }
    }

    #[test]
    fn path_record_bookkeeping() {
        let mut p = PathRecord::new(State::Z(0), &[State::Z(0), State::Z(2)]);
        for x in [1, 0, 1, 2, 1, 0] {
            p.push(State::Z(x));
        }
        assert_eq!(p.steps(), 6);
        assert_eq!(p.local_time(0, -1), 0);
        assert_eq!(p.local_time(0, 6), 3);
        assert_eq!(p.local_time_before(0), 2);
        assert_eq!(p.hitting_time(0, 1), Some(0));
        assert_eq!(p.hitting_time(0, 2), Some(2));
        assert_eq!(p.hitting_time(1, 1), Some(4));
        assert_eq!(p.hitting_time(1, 2), None);
        assert_eq!(p.last_visit(0), Some(6));
        p.pop();
        assert_eq!(p.last_visit(0), Some(2));
        assert_eq!(p.local_time(0, 5), 2);
    }
}
