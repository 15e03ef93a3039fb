//! Primal network simplex for balanced transportation problems on a complete
//! bipartite graph.
//!
//! The spanning-tree bookkeeping (parent/thread/successor lists, block-search
//! pivoting, artificial root) follows the classical LEMON layout. Capacities
//! are infinite, so arcs are either in the tree or at their lower bound.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

/// Optimal flow and node potentials of a transportation problem.
#[derive(Clone, Debug)]
pub struct SimplexSolution {
    /// Row-major `n_sources x n_targets` flow.
    pub flow: Vec<f64>,
    /// Potentials `u` (sources) and `v` (targets) with
    /// `cost[i][j] - u[i] - v[j] >= 0` on every arc, zero on basic arcs.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
}

pub struct TransportationSimplex<'a> {
    n_sources: usize,
    n_targets: usize,
    cost: &'a [f64],
    /// Entering threshold on reduced costs.
    tolerance: f64,
    max_pivots: usize,
}

struct Tree {
    node_num: usize,
    arc_num: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    art_cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    n_targets: usize,
}

impl<'a> TransportationSimplex<'a> {
    pub fn new(n_sources: usize, n_targets: usize, cost: &'a [f64]) -> Self {
        debug_assert_eq!(cost.len(), n_sources * n_targets);
        Self {
            n_sources,
            n_targets,
            cost,
            tolerance: 0.0,
            max_pivots: usize::MAX,
        }
    }

    /// Reduced costs above `-tolerance` are treated as optimal. Zero is exact
    /// when all costs are integers representable in f64.
    pub fn tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn max_pivots(mut self, max_pivots: usize) -> Self {
        self.max_pivots = max_pivots;
        self
    }

    pub fn solve(&self, supply: &[f64], demand: &[f64]) -> Result<SimplexSolution> {
        let (ns, nt) = (self.n_sources, self.n_targets);
        if supply.len() != ns || demand.len() != nt {
            return Err(Error::Simplex("marginal length mismatch".into()));
        }
        if ns == 0 || nt == 0 {
            return Err(Error::Simplex("empty marginal".into()));
        }
        let mut tree = Tree::init(ns, nt, self.cost, supply, demand);
        let pivots = tree.run(self.cost, self.tolerance, self.max_pivots)?;

        let total: f64 = supply.iter().sum();
        let leftover: f64 = (tree.arc_num..tree.arc_num + tree.node_num)
            .map(|e| tree.flow[e].abs())
            .sum();
        if leftover > 1e-9 * total.max(1.0) {
            return Err(Error::Simplex(format!(
                "infeasible: {leftover:.3e} units left on artificial arcs"
            )));
        }

        let flow: Vec<f64> = tree.flow[..tree.arc_num]
            .iter()
            .map(|&f| f.max(0.0))
            .collect();
        // reduced cost c + pi[s] - pi[t]; write as c - u - v
        let u: Vec<f64> = (0..ns).map(|i| -tree.pi[i]).collect();
        let v: Vec<f64> = (0..nt).map(|j| tree.pi[ns + j]).collect();
        Ok(SimplexSolution { flow, u, v, pivots })
    }
}

impl Tree {
    fn init(ns: usize, nt: usize, cost: &[f64], supply: &[f64], demand: &[f64]) -> Self {
        let node_num = ns + nt;
        let arc_num = ns * nt;
        let all = arc_num + node_num;
        let root = node_num;

        let max_cost = cost.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        let art = (max_cost + 1.0) * node_num as f64;

        let mut t = Tree {
            node_num,
            arc_num,
            source: vec![0; node_num],
            target: vec![0; node_num],
            art_cost: vec![0.0; node_num],
            flow: vec![0.0; all],
            state: vec![STATE_LOWER; all],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            dirty_revs: Vec::new(),
            n_targets: nt,
        };

        t.thread[root] = 0;
        t.rev_thread[0] = root;
        t.succ_num[root] = node_num + 1;
        t.last_succ[root] = root - 1;

        for u in 0..node_num {
            let s = if u < ns { supply[u] } else { -demand[u - ns] };
            let e = arc_num + u;
            t.parent[u] = root;
            t.pred[u] = e;
            t.thread[u] = u + 1;
            t.rev_thread[u + 1] = u;
            t.succ_num[u] = 1;
            t.last_succ[u] = u;
            t.state[e] = STATE_TREE;
            let a = u;
            if s >= 0.0 {
                t.pred_dir[u] = DIR_UP;
                t.pi[u] = 0.0;
                t.source[a] = u;
                t.target[a] = root;
                t.flow[e] = s;
                t.art_cost[a] = 0.0;
            } else {
                t.pred_dir[u] = DIR_DOWN;
                t.pi[u] = art;
                t.source[a] = root;
                t.target[a] = u;
                t.flow[e] = -s;
                t.art_cost[a] = art;
            }
        }
        t
    }

    #[inline]
    fn arc_source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.n_targets
        } else {
            self.source[e - self.arc_num]
        }
    }

    #[inline]
    fn arc_target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.node_num - self.n_targets + e % self.n_targets
        } else {
            self.target[e - self.arc_num]
        }
    }

    #[inline]
    fn arc_cost(&self, cost: &[f64], e: usize) -> f64 {
        if e < self.arc_num {
            cost[e]
        } else {
            self.art_cost[e - self.arc_num]
        }
    }

    fn run(&mut self, cost: &[f64], tolerance: f64, max_pivots: usize) -> Result<usize> {
        let block = ((self.arc_num as f64).sqrt() as usize).max(10);
        let mut next_arc = 0usize;
        let mut pivots = 0usize;
        let nt = self.n_targets;
        let ns = self.node_num - nt;
        loop {
            // block search over real arcs
            let mut min = -tolerance;
            let mut in_arc = NONE;
            let mut cnt = block;
            let mut e = next_arc;
            let mut scanned = 0usize;
            while scanned < self.arc_num {
                if self.state[e] == STATE_LOWER {
                    let i = e / nt;
                    let j = e % nt;
                    let c = cost[e] + self.pi[i] - self.pi[ns + j];
                    if c < min {
                        min = c;
                        in_arc = e;
                    }
                }
                scanned += 1;
                e += 1;
                if e == self.arc_num {
                    e = 0;
                }
                cnt -= 1;
                if cnt == 0 {
                    if in_arc != NONE {
                        break;
                    }
                    cnt = block;
                }
            }
            if in_arc == NONE {
                break;
            }
            next_arc = e;
            if pivots >= max_pivots {
                return Err(Error::Simplex(format!("pivot limit {max_pivots} reached")));
            }
            pivots += 1;
            self.pivot(cost, in_arc);
        }
        Ok(pivots)
    }

    fn pivot(&mut self, cost: &[f64], in_arc: usize) {
        let s_in = self.arc_source(in_arc);
        let t_in = self.arc_target(in_arc);

        // join node
        let (mut u, mut v) = (s_in, t_in);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        let join = u;

        // leaving arc; entering arcs are always at their lower bound
        let first = s_in;
        let second = t_in;
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut result = 0;
        let mut u = first;
        while u != join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(result != 0, "unbounded cycle in uncapacitated problem");
        let (u_in, v_in) = if result == 1 {
            (first, second)
        } else {
            (second, first)
        };

        // augment
        if delta > 0.0 {
            self.flow[in_arc] += delta;
            let mut u = s_in;
            while u != join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * delta;
                u = self.parent[u];
            }
            let mut u = t_in;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * delta;
                u = self.parent[u];
            }
        }
        self.state[in_arc] = STATE_TREE;
        let out_arc = self.pred[u_out];
        self.state[out_arc] = STATE_LOWER;
        self.flow[out_arc] = 0.0;

        self.update_tree(join, u_in, v_in, u_out, in_arc);

        // potentials of the moved subtree
        let c_in = self.arc_cost(cost, in_arc);
        let sigma = self.pi[v_in] - self.pi[u_in] - self.pred_dir[u_in] as f64 * c_in;
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn update_tree(&mut self, join: usize, u_in: usize, v_in: usize, u_out: usize, in_arc: usize) {
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];
        let in_source = self.arc_source(in_arc);

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == in_source { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == in_source { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }
}
