mod common;

use splitbcd::state::Block;
use splitbcd::Form;

#[test]
fn closed_form_blocks_match_numeric_minimization() {
    let (compared, bad) = common::block_exactness(120, 1, 1e-6, None);
    for m in &bad {
        eprintln!(
            "instance {} {} {}: closed {:.12} numeric {:.12}",
            m.seed, m.form, m.block, m.closed, m.numeric
        );
    }
    assert!(compared >= 300, "only {compared} comparisons");
    assert!(bad.is_empty(), "{} of {compared} blocks off", bad.len());
}

#[test]
fn random_instances_cover_every_block_kind() {
    let mut seen = std::collections::BTreeSet::new();
    for c in 0..120 {
        let (p, _) = common::random_instance(1_000_003 + c);
        let last = p.depth();
        for b in p.hp().update_order.blocks(p.form(), last).unwrap() {
            if !splitbcd::solver::block_is_exact(&p, b) {
                continue;
            }
            let kind = match b {
                Block::V(i) if i == last => "V_N",
                Block::U(i) if i == last => "U_N",
                Block::V(_) => "V_i",
                Block::U(_) => "U_i",
                Block::W(_) => "W_i",
            };
            seen.insert((p.form().to_string(), kind));
        }
    }
    for form in [Form::ThreeSplit, Form::Residual] {
        for kind in ["V_N", "U_N", "V_i", "U_i", "W_i"] {
            assert!(seen.contains(&(form.to_string(), kind)), "{form} {kind}");
        }
    }
    for kind in ["V_N", "V_i", "W_i"] {
        assert!(seen.contains(&(Form::TwoSplit.to_string(), kind)), "two-split {kind}");
    }
}
