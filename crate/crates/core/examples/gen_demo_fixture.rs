//! Regenerates the bundled demo session, its scripted chat replies and the
//! sample profile.
//!
//!     cargo run -p sidelight-core --example gen_demo_fixture -- fixtures

use std::path::PathBuf;

use serde_json::{json, Value};
use sidelight_core::session::ScriptedQuery;
use sidelight_core::synth::{build_session, Dwell, Pattern, Scene, SynthSpec};

fn fenced(tag: &str, body: Value) -> String {
    format!("```json {tag}\n{body}\n```")
}

fn rule(format: &str, contains: &[&str], response: String) -> Value {
    json!({"format": format, "contains": contains, "response": response})
}

fn context(mode: &str, activity: &str, primary: &[&str], peripheral: &[&str]) -> String {
    fenced(
        "context.v1",
        json!({
            "activity": activity,
            "gaze_mode": mode,
            "primary_entities": primary,
            "peripheral_entities": peripheral,
            "predicted_desires": [],
            "familiarity": []
        }),
    )
}

/// (content, type, entities, [novelty, interest, usefulness, unexpectedness])
type Cand<'a> = (&'a str, &'a str, &'a [&'a str], [u8; 4]);

fn knowledge(cands: &[Cand<'_>]) -> String {
    let list: Vec<Value> = cands
        .iter()
        .map(|(content, kind, entities, f)| {
            json!({
                "content": content,
                "type": kind,
                "entities": entities,
                "factors": {
                    "novelty": f[0], "interest_alignment": f[1],
                    "usefulness": f[2], "unexpectedness": f[3]
                },
                "reasoning": "scripted"
            })
        })
        .collect();
    fenced("knowledge.v1", json!({ "candidates": list }))
}

fn transform(items: &[(&[(&str, &str)], &str)]) -> String {
    let items: Vec<Value> = items
        .iter()
        .map(|(pairs, voice)| {
            json!({
                "keywords": pairs.iter().map(|(k, e)| json!({"keyword": k, "emoji": e})).collect::<Vec<_>>(),
                "voiceover": voice
            })
        })
        .collect();
    fenced("transform.v1", json!({ "items": items }))
}

fn locate(entity: &str, b: [f64; 4]) -> String {
    fenced(
        "locate.v1",
        json!({"frame_index": 15, "boxes": [{"entity": entity, "x": b[0], "y": b[1], "w": b[2], "h": b[3]}]}),
    )
}

const QUERY: &str = "what flower is that?";
const FIXATION: &str = "held their gaze";

fn script() -> Value {
    let coffee: [Cand; 4] = [
        ("A single espresso shot usually holds less caffeine than a full mug of drip coffee.", "factual", &["espresso"], [1, 1, 1, 1]),
        ("The crema on an espresso forms when pressurised water pushes out carbon dioxide trapped in freshly roasted beans.", "conceptual", &["espresso"], [1, 1, 0, 1]),
        ("Coffee beans are the seeds of a small red fruit.", "factual", &["coffee beans"], [0, 1, 0, 1]),
        ("Carts like this one often move between parks during the week.", "factual", &["cart"], [1, 0, 0, 0]),
    ];
    let garden: [Cand; 3] = [
        ("Red spider lilies flower on bare stems; their leaves only appear after the blooms fade.", "factual", &["red spider lily"], [1, 1, 0, 1]),
        ("All parts of the red spider lily are poisonous to cats, so keep cut stems away from pets.", "procedural", &["red spider lily"], [1, 1, 1, 0]),
        ("Flower beds are often watered early in the morning.", "procedural", &["flower bed"], [0, 0, 1, 0]),
    ];
    let sundial: [Cand; 2] = [
        ("A sundial's shadow can run a quarter hour off clock time in autumn, so many carry a correction table.", "conceptual", &["sundial"], [1, 1, 1, 1]),
        ("Gardeners sometimes ring a sundial with autumn bulbs such as red spider lilies so the blooms mark the equinox.", "factual", &["sundial", "red spider lily"], [1, 1, 0, 1]),
    ];
    let query: [Cand; 2] = [
        ("That is a red spider lily, Lycoris radiata, a bulb native to East Asia that blooms around the equinox.", "factual", &["red spider lily"], [1, 1, 1, 0]),
        (garden[1].0, "procedural", &["red spider lily"], [1, 1, 1, 0]),
    ];

    let rules = vec![
        rule("context.v1", &[QUERY], context("focused", "looking at a flower bed", &["red spider lily"], &["flower bed"])),
        rule("context.v1", &[FIXATION], context("focused", "resting on a bench by the garden", &["sundial"], &["red spider lily"])),
        rule("context.v1", &["frames/c_"], context("quick_browse", "strolling past flower beds", &["red spider lily", "flower bed"], &["bench"])),
        rule("context.v1", &["frames/b_"], context("quick_browse", "walking by a coffee cart", &["espresso cart", "espresso"], &["menu board"])),
        rule("context.v1", &[], context("saccade", "walking", &[], &[])),
        rule("knowledge.v1", &[QUERY], knowledge(&query)),
        rule("knowledge.v1", &[FIXATION], knowledge(&sundial)),
        rule("knowledge.v1", &["frames/c_"], knowledge(&garden)),
        rule("knowledge.v1", &["frames/b_"], knowledge(&coffee)),
        rule("knowledge.v1", &[], "NOTHING".to_string()),
        rule(
            "transform.v1",
            &["Lycoris", "poisonous to cats"],
            transform(&[
                (&[("red spider lily", "🌺"), ("East Asia", "🌏")], "That is a red spider lily, a bulb from East Asia."),
                (&[("toxic to pets", "⚠️"), ("cats", "🐈")], "Spider lilies are poisonous to cats."),
            ]),
        ),
        rule(
            "transform.v1",
            &["Lycoris"],
            transform(&[(&[("red spider lily", "🌺"), ("East Asia", "🌏")], "That is a red spider lily, a bulb from East Asia.")]),
        ),
        rule(
            "transform.v1",
            &["quarter hour"],
            transform(&[
                (&[("sundial drift", "☀️"), ("15 min", "⏱️")], "Sundials can be up to fifteen minutes off in autumn."),
                (&[("equinox bloom", "🌺")], "Spider lilies around sundials mark the equinox."),
            ]),
        ),
        rule(
            "transform.v1",
            &["bare stems", "poisonous to cats"],
            transform(&[
                (&[("bare stems", "🌺"), ("leaves later", "🍃")], "Spider lilies bloom before their leaves grow."),
                (&[("toxic to pets", "⚠️"), ("cats", "🐈")], "Spider lilies are poisonous to cats."),
            ]),
        ),
        rule(
            "transform.v1",
            &["bare stems"],
            transform(&[(&[("bare stems", "🌺"), ("leaves later", "🍃")], "Spider lilies bloom before their leaves grow.")]),
        ),
        rule(
            "transform.v1",
            &["less caffeine"],
            transform(&[
                (&[("espresso", "☕"), ("less caffeine", "📉")], "An espresso has less caffeine than a mug of drip coffee."),
                (&[("crema", "🫧")], "Crema is trapped carbon dioxide escaping."),
            ]),
        ),
        rule("locate.v1", &["Lycoris"], locate("red spider lily", [0.3, 0.3, 0.4, 0.4])),
        rule("locate.v1", &["quarter hour"], locate("sundial", [0.25, 0.25, 0.5, 0.5])),
        rule("locate.v1", &["bare stems"], locate("red spider lily", [0.25, 0.25, 0.5, 0.5])),
        rule("locate.v1", &["less caffeine"], locate("espresso cart", [0.0, 0.0, 0.5, 1.0])),
    ];
    json!({ "rules": rules })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let dir = root.join("demo_session");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let mut spec = SynthSpec::new("demo", 180_000, 20240518);
    spec.scenes = vec![
        Scene { start_ms: 0, pattern: Pattern::LeftBright, label: "a".into() },
        Scene { start_ms: 40_000, pattern: Pattern::TopBright, label: "b".into() },
        Scene { start_ms: 100_000, pattern: Pattern::CenterBlock, label: "c".into() },
    ];
    spec.dwells.push(Dwell { start_ms: 129_000, duration_ms: 1_500, x: 0.52, y: 0.47 });
    spec.queries.push(ScriptedQuery { t_ms: 160_000, text: QUERY.into() });
    let rec = build_session(&spec, &dir)?;
    std::fs::write(dir.join("mock_chat.json"), serde_json::to_string_pretty(&script())? + "\n")?;

    let profile = json!({
        "Values/Interest": ["healthy life", "fitness", "flowers", "coffee lover", "cat", "fun facts/history", "design"],
        "Age": "30",
        "Gender": "female",
        "Citizenship": "XX",
        "Residence": "XX",
        "Education": "PhD in visual design",
        "Occupation": "senior student in XX University",
        "Preferred Language": "en"
    });
    std::fs::create_dir_all(root.join("profiles"))?;
    std::fs::write(root.join("profiles/sample.json"), serde_json::to_string_pretty(&profile)? + "\n")?;
    println!("wrote {} frames, {} gaze samples to {}", rec.frames.len(), rec.gaze.len(), dir.display());
    Ok(())
}
