//! Replaces control-flow instructions of secured functions by their verifying forms.

use crate::isa::{AsmInsn, Function, Item, Module, Opcode, Operand, Origin};

fn mret_label(f: &Function, idx: usize, n: usize) -> (String, bool) {
    match f.labels_before(idx).into_iter().find(|l| *l != f.name) {
        Some(l) => (l.to_string(), false),
        None => (format!(".Lmret_{}_{n}", f.name), true),
    }
}

fn verify_function(f: &mut Function) -> usize {
    let mut changed = 0;
    for i in f.insns_mut() {
        if let Some(c) = i.op.checked() {
            if c != i.op {
                i.op = c;
                changed += 1;
            }
        }
    }
    // Handlers leave through mret, which restores the interrupted signature;
    // check the handler's own path first with a jump onto the mret.
    let mut idx = 0;
    let mut n = 0;
    while idx < f.items.len() {
        let is_mret = matches!(&f.items[idx], Item::Insn(i) if i.op == Opcode::Mret);
        if is_mret {
            let (label, fresh) = mret_label(f, idx, n);
            let prev_code = f.items[..idx].iter().rposition(|i| !matches!(i, Item::Label(_)));
            let already = prev_code.is_some_and(|p| {
                matches!(&f.items[p], Item::Insn(i) if i.op == Opcode::ChkJal && i.rd == 0 && i.target_label() == Some(label.as_str()))
            });
            if !already {
                let mut jump = AsmInsn::new(Opcode::ChkJal, 0, 0, 0, Operand::Label(label.clone()));
                jump.origin = Origin::Verify;
                let at = if fresh { idx } else { idx - f.labels_before(idx).iter().filter(|l| **l != f.name).count() };
                if fresh {
                    f.items.insert(at, Item::Label(label));
                }
                f.items.insert(at, Item::Insn(jump));
                changed += 1;
                idx += 2;
            }
            n += 1;
        }
        idx += 1;
    }
    changed
}

/// Returns the number of replaced or inserted verification instructions.
pub fn place_verifications(m: &mut Module) -> usize {
    let mut changed = 0;
    for f in m.functions.iter_mut().filter(|f| f.secured) {
        changed += verify_function(f);
    }
    if changed > 0 {
        m.clear_signing();
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_module;

    #[test]
    fn secured_loop_gets_checked_branch() {
        let mut m =
            parse_module(".func main\n .secured\nloop:\n addi t0, t0, -1\n bne t0, zero, loop\n halt\n").unwrap();
        assert_eq!(place_verifications(&mut m), 2);
        let ops: Vec<_> = m.functions[0].insns().map(|i| i.op).collect();
        assert_eq!(ops, [Opcode::Addi, Opcode::ChkBne, Opcode::ChkJal]);
        assert_eq!(place_verifications(&mut m), 0);
    }

    #[test]
    fn unsecured_is_unchanged() {
        let mut m = parse_module(".func main\nloop:\n bne t0, zero, loop\n halt\n").unwrap();
        let before = m.clone();
        assert_eq!(place_verifications(&mut m), 0);
        assert_eq!(m, before);
    }

    #[test]
    fn handler_checks_before_mret() {
        let mut m = parse_module(".func main\n halt\n.func h\n .secured\n .irq 0\n addi t0, t0, 1\n mret\n").unwrap();
        place_verifications(&mut m);
        let h = &m.functions[1];
        let ops: Vec<_> = h.insns().map(|i| i.op).collect();
        assert_eq!(ops, [Opcode::Addi, Opcode::ChkJal, Opcode::Mret]);
        let once = m.clone();
        place_verifications(&mut m);
        assert_eq!(m, once);
    }
}
