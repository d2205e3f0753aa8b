//! Dual Bernoulli masking in isolation: draws mask plans for one flow and
//! verifies the OR-composition law and the per-cell hide rate empirically.
//!
//!     cargo run --release --example mask_sampling

use flowsem::pretrain::sample_mask;

fn main() {
    let (t, n) = (10usize, 41usize);
    let valid = vec![true; t];
    let (p_packet, p_field) = (0.15, 0.15);

    let mut rng = flowsem::rng::stream(42);
    let draws = 100_000;
    let mut hidden_cells = 0u64;
    let mut law_violations = 0u64;
    let mut forced = 0u64;
    for _ in 0..draws {
        let plan = sample_mask(&valid, n, p_packet, p_field, &mut rng);
        hidden_cells += plan.target_count() as u64;
        if !plan.obeys_composition(&valid) {
            law_violations += 1;
        }
        if plan.resamples >= 8 {
            forced += 1;
        }
    }

    let expected = 1.0 - (1.0 - p_packet) * (1.0 - p_field);
    let rate = hidden_cells as f64 / (draws as f64 * (t * n) as f64);
    println!("draws: {draws}");
    println!("composition-law violations: {law_violations}");
    println!("forced fallbacks: {forced}");
    println!("per-cell hide rate: {rate:.4} (inclusion-exclusion predicts {expected:.4})");

    // One concrete plan, rendered.
    let plan = sample_mask(&valid, 8, p_packet, p_field, &mut flowsem::rng::stream(7));
    println!("\nexample plan (t=10, n=8): # = hidden");
    for ti in 0..t {
        let row: String = (0..8)
            .map(|ni| if plan.input_mask[ti * 8 + ni] { '#' } else { '.' })
            .collect();
        let tag = if plan.m_packet[ti] { " <- packet mask" } else { "" };
        println!("  {row}{tag}");
    }
    let cols: String = (0..8)
        .map(|ni| if plan.m_field[ni] { '^' } else { ' ' })
        .collect();
    println!("  {cols} (field masks)");
}
