//! Reverse-mode differentiation of scalar computations built from network
//! evaluations and smooth arithmetic.
//!
//! The tape records elementary operations (exp, log, powers, sums,
//! quotients, square roots) as nodes of a scalar DAG. Network evaluations
//! enter as single fat nodes: the forward sweep stores the layer states,
//! and during the backward sweep the adjoints of a network's value,
//! gradient and Laplacian outputs are turned into parameter gradients by
//! the analytic layer-wise reverse formulas in [`crate::net`].
//!
//! Only smooth primitives are exposed, so everything recorded is
//! differentiable along the recorded branch.

use crate::field::FieldJet;
use crate::net::{forward_jet, forward_value, jet_vjp, value_vjp, JetWorkspace, NetworkArch};

/// Handle to a scalar node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

/// Handle to a network registered on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetId(u32);

/// Outputs of one recorded jet evaluation. The nodes are consecutive:
/// value, the d gradient components, then the Laplacian.
#[derive(Debug, Clone, Copy)]
pub struct JetVars {
    base: u32,
    d: u32,
}

impl JetVars {
    pub fn value(&self) -> Var {
        Var(self.base)
    }
    pub fn grad(&self, k: usize) -> Var {
        debug_assert!(k < self.d as usize);
        Var(self.base + 1 + k as u32)
    }
    pub fn laplacian(&self) -> Var {
        Var(self.base + 1 + self.d)
    }
    pub fn dim(&self) -> usize {
        self.d as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Exp(u32),
    /// `exp(clamp(a))`; the flag records saturation, which zeroes the
    /// derivative.
    ExpClamp(u32, bool),
    Ln(u32),
    Sqrt(u32),
    Powi(u32, i32),
    Scale(u32, f64),
    AddConst(u32),
    /// Output of a network evaluation; adjoints are routed to the
    /// evaluation records after the node sweep.
    NetOut,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    val: f64,
}

struct NetSlot {
    arch: NetworkArch,
    offset: usize,
}

enum EvalKind {
    Jet,
    Value,
}

struct EvalRecord {
    net: u32,
    kind: EvalKind,
    /// Range into the point buffer.
    x_off: u32,
    /// First output node (value).
    base: u32,
    /// Workspace pool slot holding the forward state.
    ws: u32,
}

/// Records a scalar computation over one flat parameter vector and plays
/// it backwards.
#[derive(Default)]
pub struct Tape {
    params: Vec<f64>,
    nodes: Vec<Node>,
    nets: Vec<NetSlot>,
    evals: Vec<EvalRecord>,
    xbuf: Vec<f64>,
    pool: Vec<JetWorkspace>,
    adjoint: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Replaces the global parameter vector the tape differentiates
    /// against. Invalidates previously recorded nodes.
    pub fn set_params(&mut self, values: &[f64]) {
        self.params.clear();
        self.params.extend_from_slice(values);
        self.reset();
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Drops recorded nodes and evaluations, keeping registered networks,
    /// parameter values and allocated buffers.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.evals.clear();
        self.xbuf.clear();
    }

    /// Binds a network architecture to the parameter slice starting at
    /// `offset` in the global vector.
    pub fn register_net(&mut self, arch: NetworkArch, offset: usize) -> NetId {
        assert!(offset + arch.param_count() <= self.params.len());
        self.nets.push(NetSlot { arch, offset });
        NetId(self.nets.len() as u32 - 1)
    }

    pub fn value_of(&self, v: Var) -> f64 {
        self.nodes[v.0 as usize].val
    }

    fn push(&mut self, op: Op, val: f64) -> Var {
        self.nodes.push(Node { op, val });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Op::Const, v)
    }

    /// A leaf referring directly to parameter `idx` of the global vector.
    pub fn param(&mut self, idx: usize) -> Var {
        let val = self.params[idx];
        self.push(Op::Param(idx as u32), val)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_of(a) + self.value_of(b);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_of(a) - self.value_of(b);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_of(a) * self.value_of(b);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_of(a) / self.value_of(b);
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value_of(a).exp();
        self.push(Op::Exp(a.0), v)
    }

    /// `exp(a)` with the exponent clamped to `[-bound, bound]`. Outside the
    /// band the value saturates and the derivative vanishes. Returns the
    /// node and whether clamping was active at record time.
    pub fn exp_clamped(&mut self, a: Var, bound: f64) -> (Var, bool) {
        let raw = self.value_of(a);
        let clamped = raw.clamp(-bound, bound);
        let sat = raw != clamped;
        let node = self.push(Op::ExpClamp(a.0, sat), clamped.exp());
        (node, sat)
    }

    /// Natural log; the argument must be positive at record time.
    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value_of(a);
        debug_assert!(x > 0.0, "ln of non-positive value {x}");
        self.push(Op::Ln(a.0), x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let x = self.value_of(a);
        debug_assert!(x >= 0.0);
        self.push(Op::Sqrt(a.0), x.sqrt())
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let v = self.value_of(a).powi(n);
        self.push(Op::Powi(a.0, n), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value_of(a);
        self.push(Op::Scale(a.0, c), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value_of(a) + c;
        self.push(Op::AddConst(a.0), v)
    }

    /// |a| with the sign resolved at record time (derivative sign(a),
    /// the usual almost-everywhere choice).
    pub fn abs(&mut self, a: Var) -> Var {
        let s = if self.value_of(a) < 0.0 { -1.0 } else { 1.0 };
        self.scale(a, s)
    }

    pub fn sum(&mut self, vars: &[Var]) -> Var {
        let mut acc = match vars.first() {
            Some(&v) => v,
            None => return self.constant(0.0),
        };
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn mean(&mut self, vars: &[Var]) -> Var {
        let s = self.sum(vars);
        self.scale(s, 1.0 / vars.len().max(1) as f64)
    }

    fn take_ws(&mut self, slot: usize) -> JetWorkspace {
        while self.pool.len() <= slot {
            self.pool.push(JetWorkspace::new());
        }
        std::mem::take(&mut self.pool[slot])
    }

    /// Records a full jet evaluation of a registered network at `x`.
    pub fn jet(&mut self, net: NetId, x: &[f64]) -> JetVars {
        let slot = self.evals.len();
        let mut ws = self.take_ws(slot);
        let (jet, x_off) = {
            let s = &self.nets[net.0 as usize];
            let theta = &self.params[s.offset..s.offset + s.arch.param_count()];
            let jet = forward_jet(&s.arch, theta, x, &mut ws);
            let x_off = self.xbuf.len() as u32;
            self.xbuf.extend_from_slice(x);
            (jet, x_off)
        };
        self.pool[slot] = ws;
        let d = x.len();
        let base = self.nodes.len() as u32;
        self.nodes.push(Node {
            op: Op::NetOut,
            val: jet.value,
        });
        for k in 0..d {
            self.nodes.push(Node {
                op: Op::NetOut,
                val: jet.grad[k],
            });
        }
        self.nodes.push(Node {
            op: Op::NetOut,
            val: jet.laplacian,
        });
        self.evals.push(EvalRecord {
            net: net.0,
            kind: EvalKind::Jet,
            x_off,
            base,
            ws: slot as u32,
        });
        JetVars { base, d: d as u32 }
    }

    /// Records a value-only evaluation of a registered network at `x`.
    pub fn value(&mut self, net: NetId, x: &[f64]) -> Var {
        let slot = self.evals.len();
        let mut ws = self.take_ws(slot);
        let (v, x_off) = {
            let s = &self.nets[net.0 as usize];
            let theta = &self.params[s.offset..s.offset + s.arch.param_count()];
            let v = forward_value(&s.arch, theta, x, &mut ws);
            let x_off = self.xbuf.len() as u32;
            self.xbuf.extend_from_slice(x);
            (v, x_off)
        };
        self.pool[slot] = ws;
        let base = self.nodes.len() as u32;
        let node = self.push(Op::NetOut, v);
        self.evals.push(EvalRecord {
            net: net.0,
            kind: EvalKind::Value,
            x_off,
            base,
            ws: slot as u32,
        });
        node
    }

    /// Plain (non-recorded) jet of a registered network, for read-outs.
    pub fn peek_jet(&mut self, net: NetId, x: &[f64]) -> FieldJet {
        let mut ws = JetWorkspace::new();
        let s = &self.nets[net.0 as usize];
        let theta = &self.params[s.offset..s.offset + s.arch.param_count()];
        forward_jet(&s.arch, theta, x, &mut ws)
    }

    /// Reverse sweep from `root`, accumulating d root / d params into
    /// `grad` (which must have the global parameter length and is not
    /// cleared first).
    pub fn backward(&mut self, root: Var, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        self.adjoint.clear();
        self.adjoint.resize(self.nodes.len(), 0.0);
        self.adjoint[root.0 as usize] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let adj = self.adjoint[i];
            if adj == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            match node.op {
                Op::Const | Op::NetOut => {}
                Op::Param(p) => grad[p as usize] += adj,
                Op::Add(a, b) => {
                    self.adjoint[a as usize] += adj;
                    self.adjoint[b as usize] += adj;
                }
                Op::Sub(a, b) => {
                    self.adjoint[a as usize] += adj;
                    self.adjoint[b as usize] -= adj;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a as usize].val, self.nodes[b as usize].val);
                    self.adjoint[a as usize] += adj * vb;
                    self.adjoint[b as usize] += adj * va;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.nodes[a as usize].val, self.nodes[b as usize].val);
                    self.adjoint[a as usize] += adj / vb;
                    self.adjoint[b as usize] -= adj * va / (vb * vb);
                }
                Op::Exp(a) => self.adjoint[a as usize] += adj * node.val,
                Op::ExpClamp(a, sat) => {
                    if !sat {
                        self.adjoint[a as usize] += adj * node.val;
                    }
                }
                Op::Ln(a) => self.adjoint[a as usize] += adj / self.nodes[a as usize].val,
                Op::Sqrt(a) => {
                    if node.val != 0.0 {
                        self.adjoint[a as usize] += adj / (2.0 * node.val);
                    }
                }
                Op::Powi(a, n) => {
                    let va = self.nodes[a as usize].val;
                    self.adjoint[a as usize] += adj * n as f64 * va.powi(n - 1);
                }
                Op::Scale(a, c) => self.adjoint[a as usize] += adj * c,
                Op::AddConst(a) => self.adjoint[a as usize] += adj,
            }
        }
        // Route network-output adjoints through the analytic reverse
        // sweeps.
        for e in 0..self.evals.len() {
            let (net, base, x_off, ws_slot, is_jet) = {
                let r = &self.evals[e];
                (
                    r.net as usize,
                    r.base as usize,
                    r.x_off as usize,
                    r.ws as usize,
                    matches!(r.kind, EvalKind::Jet),
                )
            };
            let slot = &self.nets[net];
            let d = slot.arch.input_dim;
            let offset = slot.offset;
            let count = slot.arch.param_count();
            let theta_ptr = &self.params[offset..offset + count] as *const [f64];
            let grad_slice = &mut grad[offset..offset + count];
            let mut ws = std::mem::take(&mut self.pool[ws_slot]);
            // `params` is not aliased by `grad`; re-borrow is safe.
            let theta: &[f64] = unsafe { &*theta_ptr };
            let _ = x_off;
            if is_jet {
                let vbar = self.adjoint[base];
                let gbar = &self.adjoint[base + 1..base + 1 + d];
                let lbar = self.adjoint[base + 1 + d];
                if vbar != 0.0 || lbar != 0.0 || gbar.iter().any(|&g| g != 0.0) {
                    let gbar = gbar.to_vec();
                    jet_vjp(&slot.arch, theta, &mut ws, vbar, &gbar, lbar, grad_slice);
                }
            } else {
                let vbar = self.adjoint[base];
                if vbar != 0.0 {
                    value_vjp(&slot.arch, theta, &mut ws, vbar, grad_slice);
                }
            }
            self.pool[ws_slot] = ws;
        }
    }
}
