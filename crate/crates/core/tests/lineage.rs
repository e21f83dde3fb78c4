mod common;

use std::collections::BTreeSet;

use agentprov::sim::{prompt_text, MockLlm};
use agentprov::{
    backward_lineage, decision_context, forward_impact, paths, root_cause, NodeKind, ProvCategory, SimConfig,
};
use common::{build, graph_ids, ingest_all, sim, stream, StreamOracle};
use proptest::prelude::*;

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn decisions(ids: &BTreeSet<String>) -> BTreeSet<String> {
    ids.iter()
        .filter(|id| id.starts_with("Agent_Decision_"))
        .cloned()
        .collect()
}

#[test]
fn first_layer_lineage() {
    let g = build(&sim(1, 1));
    let sub = backward_lineage(&g, "Agent_Decision_1", None).unwrap();
    let expected = set(&[
        "Agent_Decision_1",
        "Agent_Tool_1",
        "Scores_1",
        "Control_Result_1",
        "LLM_Invocation_1",
        "Prompt_1",
        "Response_1",
        "AIModel:mock/gpt-4o",
        "Model_Evaluation_1",
        "Physics_Model_1",
        "Sensor_Data_1",
        "Sensor_Driver_1",
        "Experiment_Setup",
    ]);
    assert_eq!(graph_ids(&g, &sub.nodes), expected);
    assert_eq!(sub.context, set(&["Analysis_Agent", "Scientist"]));
    assert!(!sub.frontier_reached);
    for e in &sub.edges {
        assert!(sub.members().contains(&e.src) && sub.members().contains(&e.dst), "{e}");
    }
}

#[test]
fn lineage_matches_closure_oracle() {
    let events = sim(5, 2);
    let oracle = StreamOracle::from_events(&events);
    let g = build(&events);
    let sub = backward_lineage(&g, "Agent_Decision_5", None).unwrap();
    assert_eq!(graph_ids(&g, &sub.nodes), oracle.backward("Agent_Decision_5"));
    assert!(sub.contains("Experiment_Setup"));
    for i in 1..=5 {
        assert!(sub.contains(&format!("Sensor_Data_{i}")));
    }
}

#[test]
fn source_node_lineage_is_trivial() {
    let g = build(&sim(2, 1));
    let sub = backward_lineage(&g, "Experiment_Setup", None).unwrap();
    assert_eq!(sub.nodes, set(&["Experiment_Setup"]));
    assert_eq!(sub.context, set(&["Scientist"]));
    assert_eq!(sub.edges.len(), 1);
}

#[test]
fn decisions_feed_forward() {
    let n = 5;
    let events = sim(n, 3);
    let oracle = StreamOracle::from_events(&events);
    let g = build(&events);
    let sub = forward_impact(&g, "Agent_Decision_1", None).unwrap();
    assert_eq!(graph_ids(&g, &sub.nodes), oracle.forward("Agent_Decision_1"));
    let mut later = decisions(&sub.nodes);
    later.remove("Agent_Decision_1");
    assert_eq!(later, (2..=n).map(|i| format!("Agent_Decision_{i}")).collect());

    for i in 1..n {
        for j in i + 1..=n {
            let back = backward_lineage(&g, &format!("Agent_Decision_{j}"), None).unwrap();
            assert!(back.contains(&format!("Agent_Decision_{i}")));
        }
    }
}

#[test]
fn last_decision_is_a_sink() {
    let g = build(&sim(3, 3));
    let sub = forward_impact(&g, "Agent_Decision_3", None).unwrap();
    assert_eq!(sub.nodes, set(&["Agent_Decision_3"]));
    assert_eq!(sub.context, set(&["Analysis_Agent"]));
}

#[test]
fn sensor_data_reaches_later_decisions() {
    let g = build(&sim(4, 3));
    let sub = forward_impact(&g, "Sensor_Data_2", None).unwrap();
    assert_eq!(
        decisions(&sub.nodes),
        set(&["Agent_Decision_2", "Agent_Decision_3", "Agent_Decision_4"])
    );
}

#[test]
fn decision_context_of_layer_two() {
    let events = sim(3, 5);
    let oracle = StreamOracle::from_events(&events);
    let g = build(&events);
    let ctx = decision_context(&g, "Agent_Decision_2").unwrap();
    assert_eq!(ctx.tool_id, "Agent_Tool_2");
    assert_eq!(ctx.agent_id.as_deref(), Some("Analysis_Agent"));
    assert_eq!(
        ctx.inputs.iter().cloned().collect::<BTreeSet<_>>(),
        set(&["Agent_Decision_1", "Control_Result_2", "Response_2", "Scores_2"])
    );
    assert!(!ctx.missing_invocation);
    assert_eq!(ctx.invocations.len(), 1);
    assert_eq!(ctx.invocations[0].invocation_id, "LLM_Invocation_2");
    let prompt = ctx.prompt().unwrap();
    let response = ctx.response().unwrap();
    assert_eq!(prompt.id, "Prompt_2");
    assert_eq!(response.id, "Response_2");
    assert_eq!(prompt.text.as_ref(), oracle.texts.get("Prompt_2"));
    assert_eq!(response.text.as_ref(), oracle.texts.get("Response_2"));
    assert!(prompt.text.as_ref().unwrap().contains("Layer 2"));
    assert_eq!(ctx.model().unwrap().name(), Some("gpt-4o"));
    for id in ctx.node_ids() {
        assert!(g.contains(&id));
    }
}

#[test]
fn first_decision_has_no_prior_decision_input() {
    let g = build(&sim(2, 5));
    let ctx = decision_context(&g, "Agent_Decision_1").unwrap();
    assert_eq!(
        ctx.inputs.iter().cloned().collect::<BTreeSet<_>>(),
        set(&["Control_Result_1", "Response_1", "Scores_1"])
    );
}

#[test]
fn fault_drill() {
    let n = 5;
    let seed = 17;
    let events = stream(&SimConfig::new(n, seed).with_fault(2));
    let oracle = StreamOracle::from_events(&events);
    let g = build(&events);

    let ctx = decision_context(&g, "Agent_Decision_2").unwrap();
    let prompt = ctx.prompt().unwrap().text.clone().unwrap();
    let response = ctx.response().unwrap().text.clone().unwrap();
    assert_eq!(Some(&prompt), oracle.texts.get("Prompt_2"));
    assert_eq!(Some(&response), oracle.texts.get("Response_2"));
    let llm = MockLlm::new(seed);
    assert_eq!(response, llm.hallucinate(2, &prompt));
    assert_ne!(response, llm.complete(2, &prompt));
    assert!(prompt.starts_with("Layer 2:"));
    assert_eq!(
        g.node("Agent_Decision_2").unwrap().attributes.get("faulty"),
        Some(&true.into())
    );

    let rc = root_cause(&g, "Agent_Decision_2").unwrap();
    assert!(rc.upstream.contains("Prompt_2"));
    assert!(rc.upstream.contains("Response_2"));
    let mut later = decisions(&rc.downstream.nodes);
    later.remove("Agent_Decision_2");
    assert_eq!(later, (3..=n).map(|i| format!("Agent_Decision_{i}")).collect());
    for id in &rc.downstream.nodes {
        let node = g.node(id).unwrap();
        assert!(
            !(node.category() == ProvCategory::Entity && id.ends_with("_1")),
            "layer-1 entity {id} downstream"
        );
    }
    assert_eq!(graph_ids(&g, &rc.downstream.nodes), oracle.forward("Agent_Decision_2"));
    let all = rc.combined();
    assert!(all.contains("Experiment_Setup") && all.contains("Agent_Decision_5"));
}

#[test]
fn prompt_text_is_recoverable() {
    let g = build(&sim(2, 5));
    let text = g.node("Prompt_1").unwrap().text("text").unwrap();
    let scores = g.node("Scores_1").unwrap();
    let s = |k| scores.attributes[k].as_f64().unwrap();
    assert_eq!(text, prompt_text(1, &[s("score_a"), s("score_b"), s("score_c")], None));
}

#[test]
fn global_source_impacts_nearly_everything() {
    let g = build(&sim(3, 5));
    let rc = root_cause(&g, "Experiment_Setup").unwrap();
    assert_eq!(rc.upstream.nodes.len(), 1);
    // everything in the layers, but not the campaign, workflow or model
    assert_eq!(rc.downstream.nodes.len(), 1 + 11 * 3);
    assert!(rc.downstream.nodes.len() < g.node_count());
}

#[test]
fn workflows_sharing_a_graph_stay_disjoint() {
    let a = stream(&SimConfig::new(3, 1).with_namespace("wfA/"));
    let b = stream(&SimConfig::new(3, 2).with_namespace("wfB/"));
    let mut g = agentprov::ProvGraph::new();
    ingest_all(&mut g, &a);
    ingest_all(&mut g, &b);
    assert_eq!(g.node_count(), 2 * (6 + 33) - 1, "the model node is shared");
    for start in ["wfA/Experiment_Setup", "wfA/Agent_Decision_1", "wfA/Sensor_Data_2"] {
        let rc = root_cause(&g, start).unwrap();
        assert!(
            rc.downstream.members().iter().all(|id| !id.starts_with("wfB/")),
            "{start}"
        );
        assert!(
            rc.upstream.members().iter().all(|id| !id.starts_with("wfB/")),
            "{start}"
        );
    }
}

#[test]
fn decision_to_decision_path() {
    let g = build(&sim(3, 1));
    let p = paths(&g, "Agent_Decision_1", "Agent_Decision_2", 10).unwrap();
    assert_eq!(p.paths.len(), 1);
    assert!(!p.truncated);
    assert_eq!(
        p.paths[0].to_string(),
        "Agent_Decision_1 -[used]-> Agent_Tool_2 -[wasGeneratedBy]-> Agent_Decision_2"
    );
    let same = paths(&g, "Scores_2", "Scores_2", 1).unwrap();
    assert_eq!(same.paths.len(), 1);
    assert!(same.paths[0].edges.is_empty());
}

#[test]
fn path_count_matches_exhaustive_enumeration() {
    let events = sim(3, 1);
    let oracle = StreamOracle::from_events(&events);
    let g = build(&events);
    for (from, to) in [
        ("Sensor_Data_1", "Agent_Decision_2"),
        ("Experiment_Setup", "Agent_Decision_3"),
        ("Control_Result_1", "Agent_Tool_2"),
        ("Agent_Decision_3", "Sensor_Data_1"),
    ] {
        let expected = oracle.count_paths(from, to);
        let found = paths(&g, from, to, 1000).unwrap();
        assert_eq!(found.paths.len(), expected, "{from} -> {to}");
        assert!(!found.truncated);
        let distinct: BTreeSet<_> = found.paths.iter().map(|p| p.nodes.clone()).collect();
        assert_eq!(distinct.len(), found.paths.len());
        for p in &found.paths {
            assert_eq!(p.nodes.first().map(String::as_str), Some(from));
            assert_eq!(p.nodes.last().map(String::as_str), Some(to));
            for (e, w) in p.edges.iter().zip(p.nodes.windows(2)) {
                assert!(g.edge(e).is_some());
                assert!(e.kind.is_dataflow());
                assert!((e.src == w[0] && e.dst == w[1]) || (e.src == w[1] && e.dst == w[0]));
            }
        }
    }
    assert_eq!(oracle.count_paths("Sensor_Data_1", "Agent_Decision_2"), 2);
}

#[test]
fn decision_context_rejects_non_decisions() {
    let g = build(&sim(1, 1));
    assert!(decision_context(&g, "Sensor_Data_1").is_err());
    assert!(decision_context(&g, "Experiment_Setup").is_err());
    assert!(decision_context(&g, "Nope").is_err());
}

fn all_pairs_dual(layers: usize, seed: u64) -> Result<(), TestCaseError> {
    let g = build(&sim(layers, seed));
    let ids: Vec<String> = g.nodes().map(|n| n.id.clone()).collect();
    let fwd: Vec<_> = ids.iter().map(|x| forward_impact(&g, x, None).unwrap().nodes).collect();
    let back: Vec<_> = ids
        .iter()
        .map(|y| backward_lineage(&g, y, None).unwrap().nodes)
        .collect();
    for (i, x) in ids.iter().enumerate() {
        for (j, y) in ids.iter().enumerate() {
            prop_assert_eq!(fwd[i].contains(y), back[j].contains(x), "{} / {}", x, y);
        }
    }
    Ok(())
}

#[test]
fn duality_exhaustive_three_layers() {
    all_pairs_dual(3, 0).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn duality_on_simulated_graphs(layers in 1usize..=5, seed in any::<u64>()) {
        all_pairs_dual(layers, seed)?;
    }

    #[test]
    fn depth_is_monotone(layers in 1usize..=4, pick in any::<prop::sample::Index>(), depth in 0usize..12, forward in any::<bool>()) {
        let g = build(&sim(layers, 1));
        let ids: Vec<&str> = g.nodes().map(|n| n.id.as_str()).collect();
        let start = ids[pick.index(ids.len())];
        let run = |d| if forward {
            forward_impact(&g, start, Some(d)).unwrap()
        } else {
            backward_lineage(&g, start, Some(d)).unwrap()
        };
        let (a, b) = (run(depth), run(depth + 1));
        prop_assert!(a.nodes.is_subset(&b.nodes));
        let unbounded = if forward { forward_impact(&g, start, None) } else { backward_lineage(&g, start, None) }.unwrap();
        prop_assert!(b.nodes.is_subset(&unbounded.nodes));
        if !a.frontier_reached {
            prop_assert_eq!(&a.nodes, &unbounded.nodes);
        }
    }

    #[test]
    fn lineage_equals_closure(layers in 1usize..=4, seed in 0u64..50, pick in any::<prop::sample::Index>()) {
        let events = sim(layers, seed);
        let oracle = StreamOracle::from_events(&events);
        let g = build(&events);
        let flow: Vec<&str> = g
            .nodes()
            .filter(|n| !matches!(n.category(), ProvCategory::Agent) && n.kind != NodeKind::AIModel)
            .map(|n| n.id.as_str())
            .collect();
        let start = flow[pick.index(flow.len())];
        prop_assert_eq!(graph_ids(&g, &backward_lineage(&g, start, None).unwrap().nodes), oracle.backward(start));
        prop_assert_eq!(graph_ids(&g, &forward_impact(&g, start, None).unwrap().nodes), oracle.forward(start));
    }
}
