use super::graph::{Graph, NodeId};
use super::tensor::Scalar;
use crate::error::Result;

/// Graph nodes for one gate: input weights, recurrent weights, an
/// optional diagonal peephole vector, and a bias.
#[derive(Clone, Copy, Debug)]
pub struct GateNodes {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub peephole: Option<NodeId>,
    pub bias: NodeId,
}

/// All gate parameters of one LSTM direction as graph nodes.
///
/// The input, forget, and output gates carry diagonal peephole vectors
/// reading the cell state (the forget and input gates see the previous
/// cell, the output gate the freshly updated one); the cell-input gate
/// has none.
#[derive(Clone, Copy, Debug)]
pub struct LstmStepNodes {
    pub input: GateNodes,
    pub forget: GateNodes,
    pub cell: GateNodes,
    pub output: GateNodes,
}

/// One peephole LSTM cell update, built from tape primitives so BPTT
/// falls out of the ordinary backward pass:
///
/// ```text
/// i_t = sigma(W_xi x_t + W_hi h_{t-1} + w_ci . c_{t-1} + b_i)
/// f_t = sigma(W_xf x_t + W_hf h_{t-1} + w_cf . c_{t-1} + b_f)
/// c_t = f_t . c_{t-1} + i_t . tanh(W_xc x_t + W_hc h_{t-1} + b_c)
/// o_t = sigma(W_xo x_t + W_ho h_{t-1} + w_co . c_t + b_o)
/// h_t = o_t . tanh(c_t)
/// ```
pub fn lstm_step<F: Scalar>(
    g: &mut Graph<F>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    p: &LstmStepNodes,
) -> Result<(NodeId, NodeId)> {
    let i_gate = gate_preact(g, &p.input, x, h_prev, Some(c_prev))?;
    let i_gate = g.sigmoid(i_gate);
    let f_gate = gate_preact(g, &p.forget, x, h_prev, Some(c_prev))?;
    let f_gate = g.sigmoid(f_gate);

    let cell_in = gate_preact(g, &p.cell, x, h_prev, None)?;
    let cell_in = g.tanh(cell_in);
    let keep = g.mul(f_gate, c_prev)?;
    let write = g.mul(i_gate, cell_in)?;
    let c_t = g.add(keep, write)?;

    let o_gate = gate_preact(g, &p.output, x, h_prev, Some(c_t))?;
    let o_gate = g.sigmoid(o_gate);
    let c_act = g.tanh(c_t);
    let h_t = g.mul(o_gate, c_act)?;
    Ok((h_t, c_t))
}

fn gate_preact<F: Scalar>(
    g: &mut Graph<F>,
    gate: &GateNodes,
    x: NodeId,
    h_prev: NodeId,
    cell: Option<NodeId>,
) -> Result<NodeId> {
    let from_x = g.matvec(gate.w_x, x)?;
    let from_h = g.matvec(gate.w_h, h_prev)?;
    let mut acc = g.add(from_x, from_h)?;
    if let (Some(peep), Some(c)) = (gate.peephole, cell) {
        let peeped = g.mul(peep, c)?;
        acc = g.add(acc, peeped)?;
    }
    g.add(acc, gate.bias)
}
