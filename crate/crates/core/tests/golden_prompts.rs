mod common;

use cogharness_core::embedding::HashingEmbedder;
use cogharness_core::prompt::messages_hash;
use cogharness_core::PromptKind;
use common::*;

#[test]
fn every_template_matches_its_golden_file() {
    for kind in PromptKind::ALL {
        let rendered = golden_render(kind);
        let golden = golden_text(kind);
        assert_eq!(rendered.to_text(), golden, "{}", kind.as_str());
    }
}

#[test]
fn hash_is_digest_of_messages() {
    for kind in PromptKind::ALL {
        let rendered = golden_render(kind);
        assert_eq!(rendered.hash, messages_hash(&rendered.messages()));
        assert_eq!(rendered.hash.len(), 64);
    }
}

#[test]
fn rendering_is_pure() {
    for kind in PromptKind::ALL {
        assert_eq!(golden_render(kind), golden_render(kind));
    }
}

#[test]
fn hashing_embedder_matches_golden_vector() {
    let text = std::fs::read_to_string(golden_dir().join("hash_embedding_the_boy.json")).unwrap();
    let golden: serde_json::Value = serde_json::from_str(&text).unwrap();
    let dim = golden["dimension"].as_u64().unwrap() as usize;
    let v = HashingEmbedder { dimension: dim }.embed_one(golden["text"].as_str().unwrap());
    let nonzero = golden["nonzero"].as_object().unwrap();
    for (i, x) in v.iter().enumerate() {
        let want = nonzero.get(&i.to_string()).and_then(|w| w.as_f64()).unwrap_or(0.0);
        assert_eq!(*x, want, "bucket {i}");
    }
}
