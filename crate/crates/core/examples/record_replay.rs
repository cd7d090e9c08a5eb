//! Rewrites the chat replay fixtures under `fixtures/replay`.
//!
//! The scripted answers are the model outputs we accept as reference for
//! these inputs; recording them through the real prompt builders keeps the
//! fixture keys in step with the prompts.
//!
//!     cargo run -p epiwatch-core --example record_replay

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{TimeZone, Utc};
use epiwatch_core::extract::llm::{extract_events_llm, PromptConfig};
use epiwatch_core::fake::ScriptedChat;
use epiwatch_core::mapping::{map_disease_llm, DiseaseSynonymTable, MappingPrompts};
use epiwatch_core::provider::{RecordingChat, RetryPolicy};
use epiwatch_core::{Article, Language};
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    name: String,
    url: String,
    title: String,
    description: String,
}

const ELURU: &str = r#"[{"Disease": "Mysterious Disease", "Location": "Eluru", "Incident (case or death)": "case", "Incident Type (new or total)": "new", "Number": "347"}, {"Disease": "Mysterious Disease", "Location": "Eluru", "Incident (case or death)": "death", "Incident Type (new or total)": "new", "Number": "1"}]"#;
const HIMACHAL: &str = r#"[{"Disease": "Food poisoning infection", "Location": "Himachal", "Incident (case or death)": "case", "Incident Type (new or total)": "new", "Number": "535"}]"#;

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let replay = root.join("replay");

    let articles: Vec<Fixture> = serde_json::from_str(&std::fs::read_to_string(replay.join("extraction_articles.json"))?)?;
    let answers: BTreeMap<String, &str> = articles
        .iter()
        .map(|f| {
            let text = epiwatch_core::compose_text(&f.title, &f.description);
            let reply = match f.name.as_str() {
                "eluru" => ELURU,
                "himachal" => HIMACHAL,
                _ => "[]",
            };
            (text, reply)
        })
        .collect();
    let cfg = PromptConfig::bundled();
    let numberless = cfg.numberless_prompt.clone();
    let path = replay.join("extraction_chat.json");
    let _ = std::fs::remove_file(&path);
    let chat = RecordingChat::new(
        ScriptedChat::new(move |req| {
            let last = &req.messages.last().expect("non-empty request").content;
            if *last == numberless {
                return Ok("[]".into());
            }
            Ok(answers.get(last).copied().unwrap_or("[]").to_string())
        }),
        &path,
    );
    let fetched = Utc.with_ymd_and_hms(2024, 5, 2, 12, 0, 0).unwrap();
    for f in &articles {
        let a = Article::new(&f.url, None, fetched, Language::En, &f.title, &f.description)?;
        let out = extract_events_llm(&a, &cfg, &chat, 0, &RetryPolicy::immediate(1))?;
        println!("{}: {} events", f.name, out.events.len());
    }
    chat.save()?;

    let data = root.join("data");
    let table = DiseaseSynonymTable::load(&data.join("canonical_diseases.txt"), &data.join("disease_synonyms.csv"))?;
    let path = replay.join("disease_mapping.json");
    let _ = std::fs::remove_file(&path);
    let chat = RecordingChat::new(
        ScriptedChat::new(|req| {
            let input = &req.messages.last().expect("non-empty request").content;
            Ok(match input.as_str() {
                "Diarrhoea outbreak" => "Acute Diarrhoeal Disease",
                "Bird flu (H5N1)" => "Bird flu",
                _ => "Others",
            }
            .to_string())
        }),
        &path,
    );
    let prompts = MappingPrompts::bundled();
    for name in ["Diarrhoea outbreak", "Bird flu (H5N1)", "Cricket Fever"] {
        let m = map_disease_llm(name, &table, &chat, &prompts, &RetryPolicy::immediate(1));
        println!("{name} -> {}", m.standard);
    }
    chat.save()?;
    Ok(())
}
