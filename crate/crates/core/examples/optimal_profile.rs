//! Designs the optimal localized gains for a 50-vehicle formation two
//! ways (convex symmetric design and the homotopy continuation), prints
//! both profiles, and compares their performance measures.

use platoon_h2::homotopy::{homotopy_continue, HomotopySettings, UniformBase};
use platoon_h2::symmetric::{gradient_descend, GradientSettings};
use platoon_h2::{assemble, performance, FormationSpec, StateWeight};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = FormationSpec::single(50, true, 1.0)?;

    let symmetric = gradient_descend(&spec, &GradientSettings::default(), None)?.to_structured();
    let trace = homotopy_continue(
        &spec,
        &StateWeight::global(&spec),
        &HomotopySettings::default(),
        &UniformBase::default(),
    )?;
    let nonsymmetric = trace.final_gain();

    println!("n  symmetric f_n   optimal f_n   optimal b_n");
    for i in 0..spec.n_vehicles {
        println!(
            "{:2}  {:12.6}  {:12.6}  {:12.6}",
            i + 1,
            symmetric.forward[i],
            nonsymmetric.forward[i],
            nonsymmetric.backward[i]
        );
    }

    for (name, gain) in [("symmetric", &symmetric), ("non-symmetric", nonsymmetric)] {
        let sys = assemble(&spec, gain)?;
        let rep = performance(&sys, &spec)?;
        println!(
            "{name:>14}: pi_g = {:.4}, pi_l = {:.4}, pi_ctr = {:.4}, J = {:.3}",
            rep.pi_g, rep.pi_l, rep.pi_ctr, rep.objective_j
        );
    }
    Ok(())
}
