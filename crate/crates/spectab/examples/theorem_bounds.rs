//! Check the closed-form effective-rank bounds on constructed attention
//! settings: a winner-takes-most sweep over the PE scale (bound 1) and the
//! two-group shared-vs-distinct comparison (bound 2).
//!
//! Run with: cargo run --release --example theorem_bounds

use spectab::analysis::{
    bound_thm1, bound_thm2b, construct_theorem_setting, effective_rank, theory_outputs,
    InputStructure, PeAssignment, TheoremSetting,
};

fn main() -> anyhow::Result<()> {
    let base = TheoremSetting {
        d: 8,
        d_t: 16,
        d_p: 4,
        tau: 2.0,
        c_q: 1.0,
        c_k: 1.0,
        c_cls: 1.0,
        alpha: 0.0,
        pe_assignment: PeAssignment::DistinctOrthogonal,
        structure: InputStructure::Iid,
    };

    println!("winner-takes-most attention: effective rank vs bound (C+d)exp(-C/(C+d) ln C)");
    println!("{:>5} {:>10} {:>10} {:>10}", "alpha", "C_alpha", "measured", "bound");
    for alpha in [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0] {
        let setting = TheoremSetting { alpha, ..base };
        let c = setting.c_alpha();
        let constructed = construct_theorem_setting(&setting, 5)?;
        let (outputs, _) = theory_outputs(&constructed, 400, 11);
        let measured = effective_rank(&outputs)?;
        let bound = bound_thm1(c, setting.d).exact;
        assert!(measured <= bound + 1e-6, "bound must hold");
        println!("{alpha:>5.1} {c:>10.3} {measured:>10.4} {bound:>10.4}");
    }

    println!();
    println!("two-group inputs: shared PEs collapse rank harder than distinct PEs");
    println!("{:>5} {:>10} {:>12} {:>12} {:>12}", "alpha", "C_alpha", "shared", "distinct", "1+1/C");
    for alpha in [1.0, 3.0, 6.0, 11.0] {
        let shared_setting = TheoremSetting {
            alpha,
            pe_assignment: PeAssignment::SharedWithinGroups,
            structure: InputStructure::TwoGroup,
            ..base
        };
        let distinct_setting = TheoremSetting {
            alpha,
            pe_assignment: PeAssignment::DistinctOrthogonal,
            structure: InputStructure::TwoGroup,
            ..base
        };
        let c = shared_setting.c_alpha();
        let shared_c = construct_theorem_setting(&shared_setting, 5)?;
        let distinct_c = construct_theorem_setting(&distinct_setting, 5)?;
        // Same sampling seed on both sides: common random numbers.
        let r_shared = effective_rank(&theory_outputs(&shared_c, 400, 11).0)?;
        let r_distinct = effective_rank(&theory_outputs(&distinct_c, 400, 11).0)?;
        let asymptote = bound_thm2b(c).approx;
        println!(
            "{alpha:>5.1} {c:>10.2} {r_shared:>12.4} {r_distinct:>12.4} {asymptote:>12.4}"
        );
        assert!(r_shared <= r_distinct + 1e-9, "shared must not exceed distinct");
    }
    println!("shared-PE rank approaches 1 + 1/C_alpha as the PE scale grows.");
    Ok(())
}
