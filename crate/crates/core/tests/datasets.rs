use std::path::PathBuf;

use recexplain::corpus::{generate_item_profile, load_dataset, Dataset, ProfileConfig, TemplateBackend, ITEM_PROFILE_PROMPT};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn load(name: &str) -> Dataset {
    load_dataset(&fixture(name)).unwrap()
}

fn profile_of(d: &Dataset, item: &str) -> String {
    let meta = &d.item_metadata()[item];
    let reviews: Vec<String> = d.records.iter().filter(|r| r.item_id == item).map(|r| r.review.clone()).collect();
    generate_item_profile(&TemplateBackend, item, meta, &reviews, ITEM_PROFILE_PROMPT, &ProfileConfig::default())
        .unwrap()
        .text
}

#[test]
fn book_reviews_with_optional_ratings() {
    let d = load("books.jsonl");
    let s = d.stats();
    assert_eq!((s.users, s.items, s.interactions), (3, 3, 5));
    let unrated = d.find("B77Q", "1400032717").unwrap();
    assert_eq!(unrated.rating, None);
    assert!(!unrated.meta.contains_key("author"));
    assert_eq!(d.find("A1RX", "0439064872").unwrap().rating, Some(4.0));
    let p = profile_of(&d, "0553296981");
    assert!(p.starts_with("Salt Kingdoms, a fantasy item"), "{p}");
    assert!(p.contains("O. Prem"));
}

#[test]
fn business_reviews_with_numeric_ids_and_side_fields() {
    let d = load("restaurants.jsonl");
    assert_eq!(d.stats().interactions, 4);
    let r = d.find("1001", "57").unwrap();
    assert_eq!(r.side["city"], "Toronto");
    assert_eq!(r.meta["stars"], "4.5");
    assert_eq!(r.meta["price"], "2");
    // A null metadata value is dropped rather than stored as text.
    assert!(!d.find("1003", "91").unwrap().meta.contains_key("price"));
    assert!(d.find("1002", "57").unwrap().side.is_empty());
    // `name` stands in for a missing title, and the category falls back.
    let p = profile_of(&d, "91");
    assert!(p.starts_with("Taqueria Luz, a general item"), "{p}");
}

#[test]
fn place_reviews_keep_opaque_ids() {
    let d = load("places.jsonl");
    let idx = d.index();
    assert_eq!(idx.users, ["1089912223887", "2200431"]);
    assert!(idx.item("0x88f5:0x1c2").is_some());
    let meta = &d.item_metadata()["0x88f5:0x1c2"];
    // Later records win per key; keys only the first record carried survive.
    assert_eq!(meta["address"], "12 Mill Rd");
    assert_eq!(meta["category"], "Park");
}

#[test]
fn saving_and_reloading_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["books.jsonl", "restaurants.jsonl", "places.jsonl"] {
        let d = load(name);
        let path = dir.path().join(name);
        d.save(&path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d, "{name}");
    }
}
