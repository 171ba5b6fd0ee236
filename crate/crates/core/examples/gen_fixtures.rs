//! Regenerates the replay fixtures under `fixtures/`.
//!
//! Tag rows are the published outputs; vectors are stub hashing embeddings of
//! each profile's embedding text at dimension 64.
//!
//! ```text
//! cargo run -p simhitl-core --example gen_fixtures
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use simhitl_core::ingest::{ingest_image_manifest, ingest_tabular};
use simhitl_core::prompting::{parse_interest, refine_interest, render_prompt, RefineMode, DEFAULT_TAG_COUNT};
use simhitl_core::provider::{embedding_text, fixture_key, parse_tags, stub_embed, FixtureRecord};

const DIM: usize = 64;

pub const ROOM_INTEREST: &str = "functionality of the room";
pub const FLOOR_EDIT: &str = "the floor color";
pub const AML_INTEREST: &str =
    "transaction frequency, amount patterns, beneficiary details and geographical markers";

const BATHROOM_ROWS: [&str; 4] = [
    "#Bathroom #ModernDesign #SanitaryWare",
    "#shower #bathroom #modern-design",
    "#bathroom #modern_faucet #LED_lighting",
    "#Bathroom, #Sink, #Toilet",
];

const REFINED_ROWS: [&str; 4] = [
    "#bathroom #beige_floor #modern",
    "Bathroom, Beige Floor, Elegant Design",
    "Bathroom, Beige Floor, Compact",
    "bedroom, modern design, beige floor",
];

const AML_TAGS: [&str; 3] = [
    "High frequency cross-border transactions",
    "Large amounts in different currencies",
    "Inconsistent payment formats",
];

const AML_VERDICTS: [&str; 4] = [
    "Is Money Laundering: YES",
    "Is Money Laundering: YES",
    "Is Money Laundering: YES",
    "Is Money Laundering: NO",
];

fn record(prompt: &str, payload: &str, tags: Vec<String>, free_text: &str) -> FixtureRecord {
    let values = stub_embed(&embedding_text(&tags, free_text), DIM).expect("non-empty text");
    FixtureRecord {
        key: fixture_key(prompt, payload),
        tags,
        free_text: free_text.to_owned(),
        values,
    }
}

fn write(path: &Path, records: &[FixtureRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    let images = ingest_image_manifest(dir.join("places_bathroom.json"))?;
    let v1 = parse_interest(ROOM_INTEREST)?;
    let v2 = refine_interest(&v1, FLOOR_EDIT, RefineMode::Add)?;
    let p3 = render_prompt(&v1, DEFAULT_TAG_COUNT)?;
    let p4 = render_prompt(&v2, DEFAULT_TAG_COUNT)?;
    let mut places = Vec::new();
    for (point, reply) in images.iter().zip(BATHROOM_ROWS) {
        places.push(record(&p3.text, &point.payload, parse_tags(reply, 3)?, reply));
    }
    for (point, reply) in images.iter().zip(REFINED_ROWS) {
        places.push(record(&p4.text, &point.payload, parse_tags(reply, 3)?, reply));
    }
    write(&dir.join("places_bathroom.jsonl"), &places)?;

    let (customers, _) = ingest_tabular(dir.join("aml_customers.csv"), "id")?;
    let p5 = render_prompt(&parse_interest(AML_INTEREST)?, DEFAULT_TAG_COUNT)?;
    let tags: Vec<String> = AML_TAGS.iter().map(|t| t.to_string()).collect();
    let aml: Vec<FixtureRecord> = customers
        .iter()
        .zip(AML_VERDICTS)
        .map(|(c, verdict)| record(&p5.text, &c.payload, tags.clone(), verdict))
        .collect();
    write(&dir.join("aml_customers.jsonl"), &aml)?;

    println!("wrote {} + {} fixture records", places.len(), aml.len());
    Ok(())
}
