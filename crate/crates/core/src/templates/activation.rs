use crate::dfg::OpKind;

/// 256-entry table shared by the simulator and the emitted Verilog.
///
/// Inputs and outputs are Q8 fixed point. Entry `i` holds
/// `f((i - 128) / 16)` scaled by 256 and saturated to 16 bits.
pub fn activation_table(kind: OpKind) -> [i16; 256] {
    let f: fn(f64) -> f64 = match kind {
        OpKind::TanH => f64::tanh,
        OpKind::Sigmoid => |t| 1.0 / (1.0 + (-t).exp()),
        OpKind::Exp => f64::exp,
        other => panic!("{other} has no activation table"),
    };
    let mut table = [0i16; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let t = (i as f64 - 128.0) / 16.0;
        *slot = (f(t) * 256.0)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    }
    table
}

/// Table lookup for one element.
pub fn activation(table: &[i16; 256], x: i16) -> i16 {
    let idx = ((x >> 4) as i32).clamp(-128, 127) + 128;
    table[idx as usize]
}
