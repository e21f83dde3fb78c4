//! Deterministic generator for a layer-by-layer additive-manufacturing
//! control loop driven by an AI agent.
//!
//! Per layer `i`:
//!
//! ```text
//! Experiment_Setup -> Sensor_Driver_i -> Sensor_Data_i -> Physics_Model_i -> Control_Result_i
//!   -> Model_Evaluation_i -> Scores_i -> Agent_Tool_i -> Agent_Decision_i -> Agent_Tool_{i+1}
//! Agent_Tool_i -> Prompt_i -> LLM_Invocation_i -> Response_i -> Agent_Tool_i (also informed by LLM_Invocation_i)
//! ```
//!
//! The model is mocked: responses are a pure function of seed, layer and
//! prompt text, so identical configs produce byte-identical streams.

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::event::{
    ActivityExecuted, ActivityKind, DataKind, DataRef, EventEnvelope, EventPayload, OwnerAgent, OwnerKind,
    SCHEMA_VERSION,
};
use crate::model::{AttrValue, Attributes};

pub const MODEL_NAME: &str = "gpt-4o";
pub const MODEL_PROVIDER: &str = "mock";
const OPTIONS: [char; 3] = ['A', 'B', 'C'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteMap {
    pub sensor: String,
    pub compute: String,
    pub invocation: String,
}

impl Default for SiteMap {
    fn default() -> Self {
        SiteMap {
            sensor: "edge".into(),
            compute: "hpc".into(),
            invocation: "cloud".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub layers: usize,
    pub seed: u64,
    /// Layer whose decision is driven by a hallucinated response.
    pub fault_layer: Option<usize>,
    pub sites: SiteMap,
    /// Attach telemetry and scheduling records to every activity.
    pub emit_telemetry: bool,
    /// Link activities to `Location` nodes for their site.
    pub emit_locations: bool,
    /// Prefix for every id, so several runs can share one graph.
    pub namespace: String,
}

impl SimConfig {
    pub fn new(layers: usize, seed: u64) -> Self {
        SimConfig {
            layers,
            seed,
            fault_layer: None,
            sites: SiteMap::default(),
            emit_telemetry: false,
            emit_locations: false,
            namespace: String::new(),
        }
    }

    pub fn with_fault(mut self, layer: usize) -> Self {
        self.fault_layer = Some(layer);
        self
    }

    pub fn with_namespace(mut self, ns: impl Into<String>) -> Self {
        self.namespace = ns.into();
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.layers == 0 {
            return Err(SimError::NoLayers);
        }
        if let Some(h) = self.fault_layer {
            if h == 0 || h > self.layers {
                return Err(SimError::FaultLayer {
                    layer: h,
                    layers: self.layers,
                });
            }
        }
        Ok(())
    }

    pub fn id(&self, name: &str) -> String {
        format!("{}{name}", self.namespace)
    }

    pub fn layer_id(&self, name: &str, layer: usize) -> String {
        format!("{}{name}_{layer}", self.namespace)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("at least one layer is required")]
    NoLayers,
    #[error("fault layer {layer} outside 1..={layers}")]
    FaultLayer { layer: usize, layers: usize },
}

/// Offline stand-in for a hosted chat model.
#[derive(Debug, Clone)]
pub struct MockLlm {
    seed: u64,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        MockLlm { seed }
    }

    fn tag(&self, layer: usize, prompt: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((layer as u64).to_le_bytes());
        h.update(prompt.as_bytes());
        hex::encode(h.finalize())[..8].to_owned()
    }

    /// Recommends the option with the highest score quoted in the prompt.
    pub fn complete(&self, layer: usize, prompt: &str) -> String {
        let scores = parse_scores(prompt);
        let (best, score) = scores
            .iter()
            .copied()
            .fold((OPTIONS[0], f64::MIN), |acc, s| if s.1 > acc.1 { s } else { acc });
        format!(
            "Option {best} has the highest score ({score:.3}); recommend option {best}. [mock:{}]",
            self.tag(layer, prompt)
        )
    }

    /// A confident but wrong answer: the lowest-scoring option with an
    /// invented score.
    pub fn hallucinate(&self, layer: usize, prompt: &str) -> String {
        let scores = parse_scores(prompt);
        let (worst, _) = scores
            .iter()
            .copied()
            .fold((OPTIONS[0], f64::MAX), |acc, s| if s.1 < acc.1 { s } else { acc });
        format!(
            "Option {worst} has the highest score (0.990); recommend option {worst}. [mock:{}]",
            self.tag(layer, prompt)
        )
    }
}

fn parse_scores(prompt: &str) -> Vec<(char, f64)> {
    OPTIONS
        .iter()
        .filter_map(|&opt| {
            let marker = format!("{opt}=");
            let start = prompt.find(&marker)? + marker.len();
            let rest = &prompt[start..];
            let end = rest
                .find(|c: char| !(c.is_ascii_digit() || c == '.'))
                .unwrap_or(rest.len());
            rest[..end].trim_end_matches('.').parse().ok().map(|v| (opt, v))
        })
        .collect()
}

/// The option a response recommends.
pub fn recommended_option(response: &str) -> Option<char> {
    let idx = response.find("recommend option ")? + "recommend option ".len();
    response[idx..].chars().next()
}

pub fn prompt_text(layer: usize, scores: &[f64; 3], previous: Option<char>) -> String {
    let prev = previous.map(String::from).unwrap_or_else(|| "none".into());
    format!(
        "Layer {layer}: choose the control option for the next layer. Scores: A={:.3}, B={:.3}, C={:.3}. Previous decision: {prev}.",
        scores[0], scores[1], scores[2]
    )
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

struct Emitter<'a> {
    config: &'a SimConfig,
    campaign_id: String,
    workflow_id: String,
    base: DateTime<Utc>,
    seq: usize,
    events: Vec<EventEnvelope>,
}

impl Emitter<'_> {
    fn now(&self) -> DateTime<Utc> {
        self.base + Duration::seconds(self.seq as i64 * 2)
    }

    fn ts(t: DateTime<Utc>) -> String {
        t.to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    fn emit(&mut self, site: &str, payload: EventPayload) {
        self.seq += 1;
        let event = EventEnvelope {
            event_id: format!("{}ev-{:06}", self.config.namespace, self.seq),
            emitted_at: Self::ts(self.now()),
            site: site.to_owned(),
            campaign_id: self.campaign_id.clone(),
            workflow_id: self.workflow_id.clone(),
            schema_version: SCHEMA_VERSION.into(),
            payload,
        };
        self.events.push(event);
    }

    #[allow(clippy::too_many_arguments)]
    fn activity(
        &mut self,
        site: &str,
        id: String,
        kind: ActivityKind,
        agent: Option<&str>,
        parent: Option<String>,
        used: Vec<DataRef>,
        generated: Vec<DataRef>,
        informed_by: Vec<String>,
        rng: &mut ChaCha8Rng,
    ) {
        let end = self.now() + Duration::seconds(2);
        let start = end - Duration::seconds(1);
        let (telemetry, scheduling) = if self.config.emit_telemetry {
            let mut t = Attributes::new();
            t.insert("duration_ms".into(), AttrValue::Int(1000));
            t.insert("cpu_percent".into(), AttrValue::Float(round3(rng.gen_range(5.0..95.0))));
            let mut s = Attributes::new();
            s.insert("site".into(), site.into());
            s.insert("host".into(), format!("{site}-node-{:02}", rng.gen_range(1..17)).into());
            (Some(t), Some(s))
        } else {
            (None, None)
        };
        let payload = EventPayload::ActivityExecuted(ActivityExecuted {
            name: Some(id.trim_start_matches(&self.config.namespace).to_owned()),
            activity_id: id,
            activity_kind: kind,
            parent_id: parent,
            agent_id: agent.map(str::to_owned),
            informed_by,
            used,
            generated,
            started_at: Self::ts(start),
            ended_at: Self::ts(end),
            location: self.config.emit_locations.then(|| site.to_owned()),
            telemetry,
            scheduling,
            attributes: Attributes::new(),
        });
        self.emit(site, payload);
    }
}

/// Model descriptor shared by every invocation.
pub fn model_ref() -> DataRef {
    let mut params = Attributes::new();
    params.insert("temperature".into(), AttrValue::Float(0.2));
    params.insert("type".into(), "chat".into());
    DataRef::ai_model(MODEL_PROVIDER, MODEL_NAME, &params)
}

/// Produce the full event stream for `config`, in causal order.
pub fn generate(config: &SimConfig) -> Result<Vec<EventEnvelope>, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let llm = MockLlm::new(config.seed);
    let mut em = Emitter {
        config,
        campaign_id: config.id("AM_Campaign"),
        workflow_id: config.id("AM_Workflow"),
        base: DateTime::from_timestamp(1_748_736_000, 0).expect("valid base time"),
        seq: 0,
        events: Vec::new(),
    };
    let sites = &config.sites;
    let agent = config.id("Analysis_Agent");
    let person = config.id("Scientist");
    let setup = config.id("Experiment_Setup");

    em.emit(
        &sites.compute,
        EventPayload::CampaignDeclared {
            campaign_id: em.campaign_id.clone(),
            name: "Additive manufacturing campaign".into(),
            owner_agent: Some(OwnerAgent {
                agent_id: person.clone(),
                kind: OwnerKind::Person,
                name: "Scientist".into(),
            }),
        },
    );
    em.emit(
        &sites.compute,
        EventPayload::WorkflowDeclared {
            workflow_id: em.workflow_id.clone(),
            name: "Layer-wise print control".into(),
            campaign_id: em.campaign_id.clone(),
        },
    );
    em.emit(
        &sites.compute,
        EventPayload::AgentRegistered {
            agent_id: agent.clone(),
            name: "Analysis_Agent".into(),
            attributes: Attributes::new(),
        },
    );
    em.emit(
        &sites.sensor,
        EventPayload::DataDeclared {
            data: DataRef::new(&setup, DataKind::DomainData)
                .with_attr("material", "Ti-6Al-4V")
                .with_attr("layers", config.layers as i64)
                .with_attr("layer_thickness_um", AttrValue::Int(50)),
            attributed_to: Some(person.clone()),
        },
    );

    let mut previous: Option<(String, char)> = None;
    for layer in 1..=config.layers {
        let lid = |name: &str| config.layer_id(name, layer);
        let faulty = config.fault_layer == Some(layer);

        em.activity(
            &sites.sensor,
            lid("Sensor_Driver"),
            ActivityKind::Task,
            None,
            None,
            vec![DataRef::new(&setup, DataKind::DomainData)],
            vec![DataRef::new(lid("Sensor_Data"), DataKind::DomainData)
                .with_attr("layer", layer as i64)
                .with_attr("mean_temp_c", round3(rng.gen_range(1550.0..1700.0)))
                .with_attr("samples", AttrValue::Int(rng.gen_range(800..1200)))],
            vec![],
            &mut rng,
        );

        let mut control = DataRef::new(lid("Control_Result"), DataKind::DomainData).with_attr("layer", layer as i64);
        for opt in OPTIONS {
            control = control.with_attr(
                &format!("power_{}", opt.to_ascii_lowercase()),
                round3(rng.gen_range(150.0..400.0)),
            );
        }
        em.activity(
            &sites.compute,
            lid("Physics_Model"),
            ActivityKind::Task,
            None,
            None,
            vec![DataRef::new(lid("Sensor_Data"), DataKind::DomainData)],
            vec![control],
            vec![],
            &mut rng,
        );

        let scores = [0; 3].map(|_| round3(rng.gen_range(0.0..1.0)));
        let mut scored = DataRef::new(lid("Scores"), DataKind::DomainData).with_attr("layer", layer as i64);
        for (opt, s) in OPTIONS.iter().zip(scores) {
            scored = scored.with_attr(&format!("score_{}", opt.to_ascii_lowercase()), s);
        }
        em.activity(
            &sites.compute,
            lid("Model_Evaluation"),
            ActivityKind::Task,
            None,
            None,
            vec![DataRef::new(lid("Control_Result"), DataKind::DomainData)],
            vec![scored],
            vec![],
            &mut rng,
        );

        let prompt = prompt_text(layer, &scores, previous.as_ref().map(|p| p.1));
        let response = if faulty {
            llm.hallucinate(layer, &prompt)
        } else {
            llm.complete(layer, &prompt)
        };
        let choice = recommended_option(&response).expect("mock responses name an option");

        em.activity(
            &sites.invocation,
            lid("LLM_Invocation"),
            ActivityKind::AIModelInvocation,
            Some(&agent),
            Some(lid("Agent_Tool")),
            vec![DataRef::new(lid("Prompt"), DataKind::Prompt), model_ref()],
            vec![DataRef::new(lid("Response"), DataKind::ResponseData).with_attr("text", response.clone())],
            vec![],
            &mut rng,
        );

        let mut used = vec![
            DataRef::new(lid("Scores"), DataKind::DomainData),
            DataRef::new(lid("Control_Result"), DataKind::DomainData),
            DataRef::new(lid("Response"), DataKind::ResponseData),
        ];
        if let Some((prev_id, _)) = &previous {
            used.push(DataRef::new(prev_id, DataKind::DomainData));
        }
        let mut decision = DataRef::new(lid("Agent_Decision"), DataKind::DomainData)
            .with_attr("layer", layer as i64)
            .with_attr("choice", choice.to_string());
        if faulty {
            decision = decision.with_attr("faulty", true);
        }
        em.activity(
            &sites.compute,
            lid("Agent_Tool"),
            ActivityKind::AgentTool,
            Some(&agent),
            None,
            used,
            vec![
                DataRef::new(lid("Prompt"), DataKind::Prompt)
                    .with_attr("text", prompt)
                    .with_attr("layer", layer as i64),
                decision,
            ],
            vec![lid("LLM_Invocation")],
            &mut rng,
        );
        previous = Some((lid("Agent_Decision"), choice));
    }
    Ok(em.events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert_eq!(generate(&SimConfig::new(0, 1)).unwrap_err(), SimError::NoLayers);
        assert!(matches!(
            generate(&SimConfig::new(2, 1).with_fault(3)),
            Err(SimError::FaultLayer { layer: 3, layers: 2 })
        ));
        assert!(generate(&SimConfig::new(2, 1).with_fault(0)).is_err());
        assert!(generate(&SimConfig::new(2, 1).with_fault(2)).is_ok());
    }

    #[test]
    fn deterministic_stream() {
        let lines = |seed| {
            generate(&SimConfig::new(3, seed))
                .unwrap()
                .iter()
                .map(EventEnvelope::to_line)
                .collect::<Vec<_>>()
        };
        assert_eq!(lines(7), lines(7));
        assert_ne!(lines(7), lines(8));
    }

    #[test]
    fn event_shape() {
        let events = generate(&SimConfig::new(2, 7)).unwrap();
        // 4 declarations + 5 activities per layer
        assert_eq!(events.len(), 4 + 5 * 2);
        let tool2 = events
            .iter()
            .find_map(|e| match &e.payload {
                EventPayload::ActivityExecuted(a) if a.activity_id == "Agent_Tool_2" => Some(a),
                _ => None,
            })
            .unwrap();
        assert!(tool2.used.iter().any(|r| r.data_id == "Agent_Decision_1"));
        assert_eq!(tool2.informed_by, vec!["LLM_Invocation_2"]);
        for e in &events {
            e.validate().unwrap();
        }
    }

    #[test]
    fn mock_model_is_pure_and_follows_scores() {
        let llm = MockLlm::new(3);
        let p = prompt_text(4, &[0.1, 0.8, 0.3], Some('A'));
        assert_eq!(llm.complete(4, &p), llm.complete(4, &p));
        assert_eq!(recommended_option(&llm.complete(4, &p)), Some('B'));
        assert_eq!(recommended_option(&llm.hallucinate(4, &p)), Some('A'));
        assert_ne!(llm.complete(4, &p), llm.complete(5, &p));
        assert_ne!(MockLlm::new(4).complete(4, &p), llm.complete(4, &p));
        assert_eq!(parse_scores(&p), vec![('A', 0.1), ('B', 0.8), ('C', 0.3)]);
    }

    #[test]
    fn fault_marks_decision() {
        let events = generate(&SimConfig::new(3, 7).with_fault(2)).unwrap();
        let faulty: Vec<_> = events
            .iter()
            .filter_map(|e| match &e.payload {
                EventPayload::ActivityExecuted(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| a.generated.iter())
            .filter(|r| r.attributes.get("faulty") == Some(&AttrValue::Bool(true)))
            .map(|r| r.data_id.as_str())
            .collect();
        assert_eq!(faulty, vec!["Agent_Decision_2"]);
    }
}
