use std::collections::BTreeSet;

use gridspace_core::fdir::{
    apply_plan, check_loading, find_restoration_paths, isolate_fault, plan_reconfiguration, restore, Action,
    FdirError, SwitchKind, Node, Topology,
};
use gridspace_oracles::{brute, gen};
use proptest::prelude::*;

const SAMPLE: &str = include_str!("../../../fixtures/two_feeder.json");

fn faultable(topo: &Topology) -> Vec<String> {
    topo.edges()
        .values()
        .filter(|e| {
            let tie = |n: &str| matches!(topo.node(n), Some(Node::Switch { kind: SwitchKind::TieRecloser, .. }));
            !tie(&e.a) && !tie(&e.b)
        })
        .map(|e| e.id.clone())
        .collect()
}

#[test]
fn sample_feeder_cut_matches_oracle() {
    let topo = Topology::from_json(SAMPLE).unwrap();
    assert_eq!(topo.nodes().len(), 7);
    for edge in topo.edges().keys() {
        let oracle = brute::min_isolating_cut(&topo, edge);
        match isolate_fault(&topo, edge) {
            Ok((_, opened)) => assert_eq!(Some(opened), oracle, "edge {edge}"),
            Err(FdirError::NoIsolatingSwitches(_)) => assert_eq!(oracle, None, "edge {edge}"),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn sample_feeder_paths_match_enumeration() {
    let topo = Topology::from_json(SAMPLE).unwrap();
    for edge in faultable(&topo) {
        let Ok((isolated, _)) = isolate_fault(&topo, &edge) else { continue };
        let got: Vec<Vec<String>> = find_restoration_paths(&isolated).into_iter().map(|p| p.nodes).collect();
        assert_eq!(got, brute::restoration_paths(&isolated), "edge {edge}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn isolation_is_the_minimal_cut(topo in gen::feeder(20)) {
        for edge in topo.edges().keys() {
            let oracle = brute::min_isolating_cut(&topo, edge);
            match isolate_fault(&topo, edge) {
                Ok((isolated, opened)) => {
                    prop_assert_eq!(Some(opened), oracle);
                    prop_assert!(brute::loading(&isolated).is_ok());
                }
                Err(FdirError::NoIsolatingSwitches(_)) => prop_assert_eq!(oracle, None),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }
    }

    #[test]
    fn restoration_paths_match_enumeration(topo in gen::feeder(20)) {
        for edge in faultable(&topo) {
            let Ok((isolated, _)) = isolate_fault(&topo, &edge) else { continue };
            let got: Vec<Vec<String>> = find_restoration_paths(&isolated).into_iter().map(|p| p.nodes).collect();
            prop_assert_eq!(got, brute::restoration_paths(&isolated));
        }
    }

    #[test]
    fn plans_stay_within_capacity(topo in gen::feeder(20)) {
        prop_assert!(brute::loading(&topo).is_ok());
        for edge in faultable(&topo) {
            let Ok((isolated, _)) = isolate_fault(&topo, &edge) else { continue };
            let plan = plan_reconfiguration(&isolated);
            let applied = apply_plan(&isolated, &plan).unwrap();
            if let Err(e) = brute::loading(&applied) {
                prop_assert!(false, "plan {:?} overloads: {}", plan.actions, e);
            }
            prop_assert!(check_loading(&applied).is_ok());
            let live = brute::energized_loads(&applied);
            prop_assert!(plan.picked_up_loads.is_subset(&live));
            prop_assert!(plan.infeasible_loads.is_disjoint(&live));
            let closes = plan.actions.iter().filter(|a| matches!(a, Action::CloseSwitch { .. })).count();
            let relays = plan.actions.iter().filter(|a| matches!(a, Action::RelaySetting { .. })).count();
            prop_assert_eq!(closes, relays);
        }
    }

    #[test]
    fn restore_undoes_isolation_and_plan(topo in gen::feeder(20)) {
        for edge in faultable(&topo) {
            let Ok((isolated, _)) = isolate_fault(&topo, &edge) else { continue };
            let plan = plan_reconfiguration(&isolated);
            let applied = apply_plan(&isolated, &plan).unwrap();
            if plan.actions.iter().any(|a| matches!(a, Action::OpenSwitch { .. })) {
                let refused = matches!(restore(&applied, &plan), Err(FdirError::RestoreSafetyViolation { .. }));
                prop_assert!(refused, "restore with the fault marked must be refused");
            }
            let restored = restore(&applied.clear_fault(&edge).unwrap(), &plan).unwrap();
            prop_assert_eq!(restored.switch_states(), topo.switch_states());
            prop_assert_eq!(restored.fdir_opened(), &BTreeSet::new());
        }
    }
}
