mod common;

use common::*;
use congeo_core::expr::Expr;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_expressions_reparse_to_identical_values(
        node in node_strategy(3),
        points in prop::collection::vec(prop::collection::vec(-4f64..4.0, 3), 100),
    ) {
        check_round_trip(node, &points)?;
    }

    #[test]
    fn parsing_never_panics(src in "[-+*/^() x0-9.eylnsicop,]{0,40}") {
        let _ = Expr::parse(&src, 3);
    }

    #[test]
    fn derivatives_match_central_differences_at_second_order(case in derivative_strategy()) {
        check_derivative_order(case)?;
    }

    #[test]
    fn exact_connections_are_flat(case in flatness_strategy()) {
        check_flat(case)?;
    }

    #[test]
    fn transport_is_a_homomorphism_under_concatenation(case in concat_strategy()) {
        check_concatenation(case)?;
    }

    #[test]
    fn closed_loops_of_exact_forms_transport_to_one(case in loop_strategy()) {
        check_closed_loop(case)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transport_density_solves_the_gradient_equation_to_second_order(case in quadratic_strategy()) {
        check_gradient_equation(case)?;
    }

    #[test]
    fn evolution_conserves_mass(case in mass_strategy()) {
        check_mass(case)?;
    }
}
