#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mic_core::declaration::DeclarationStyle;
use mic_core::icl::{assemble_instance, Exemplar};
use mic_core::model::{proxy_token, CropRect, Draft, ImageAssetSpec, InterleavedInstance};
use mic_core::seed::Rng;
use rand::seq::SliceRandom;
use rand::Rng as _;

const WORDS: &[&str] = &[
    "the", "red", "car", "is", "parked", "near", "a", "tree", "what", "color", "?", "Answer:",
    "\"quoted\"", "back\\slash", "tab\there", "line\nbreak", "ünïcödé", "日本語", "🙂", "[IMG]", "IMG3", "[IMGx]",
    "{braces}", "50%", "image", "is", ":", "\u{0}", "\u{1f}", "</s>",
];

pub fn words<R: rand::Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn asset<R: rand::Rng>(rng: &mut R) -> ImageAssetSpec {
    let uri = format!("data/{}/img_{}.jpg", words(rng, 0, 1).replace(['\n', '\t'], "_"), rng.gen_range(0..100_000));
    let base = if rng.gen_bool(0.5) {
        ImageAssetSpec::file(uri.clone()).with_size(rng.gen_range(16..2000), rng.gen_range(16..2000))
    } else {
        ImageAssetSpec::file(uri.clone())
    };
    match rng.gen_range(0..4) {
        0 => {
            let count = rng.gen_range(1..5000);
            ImageAssetSpec::video_frame(format!("{uri}.mp4"), rng.gen_range(0..count), Some(count))
        }
        1 => {
            let parent = ImageAssetSpec::file(uri).with_size(400, 300);
            let x0 = rng.gen_range(0..399);
            let y0 = rng.gen_range(0..299);
            let rect = CropRect::new(x0, y0, rng.gen_range(x0 + 1..=400), rng.gen_range(y0 + 1..=300)).unwrap();
            ImageAssetSpec::crop(&parent, rect)
        }
        _ => base,
    }
}

pub fn style<R: rand::Rng>(rng: &mut R) -> DeclarationStyle {
    if rng.gen_bool(0.5) {
        DeclarationStyle::IsForm
    } else {
        DeclarationStyle::ColonForm
    }
}

/// A locally numbered part with `k` declared images and text that refers
/// back to some of them.
pub fn part<R: rand::Rng>(rng: &mut R, k: u32, tag: &str) -> Draft {
    let mut d = Draft::new(format!("{tag}-{}", rng.gen_range(0..1_000_000)), "fuzz");
    let st = style(rng);
    if rng.gen_bool(0.3) {
        d.push_text(&words(rng, 1, 4));
        d.push_text(" ");
    }
    for j in 0..k {
        d.push_text(&st.render(j));
        d.push_image(j, asset(rng));
        d.push_text(if rng.gen_bool(0.8) { ".\n" } else { ", " });
    }
    let mut question = words(rng, 0, 8);
    for _ in 0..rng.gen_range(0..3) {
        if k > 0 {
            let j = rng.gen_range(0..k);
            let reference = match rng.gen_range(0..3) {
                0 => format!(" image {j}, "),
                1 => format!(" image {}x ", j),
                _ => proxy_token(j),
            };
            question.push_str(&format!(" {reference} "));
        }
        question.push_str(&words(rng, 0, 3));
    }
    d.push_text(&question);
    d.target = words(rng, 0, 3);
    if k > 0 && rng.gen_bool(0.3) {
        d.target.push_str(&proxy_token(rng.gen_range(0..k)));
    }
    d
}

/// A valid instance with random exemplars, assets and text.
pub fn instance(rng: &mut Rng) -> InterleavedInstance {
    let n_ex = rng.gen_range(0..=3);
    let exemplars: Vec<Exemplar> = (0..n_ex)
        .map(|i| {
            let k = rng.gen_range(0..=3);
            part(rng, k, &format!("ex{i}")).into()
        })
        .collect();
    let k = rng.gen_range(0..=4);
    let mut query = part(rng, k, "q");
    for _ in 0..rng.gen_range(0..3) {
        query.meta.insert(words(rng, 1, 1), words(rng, 0, 2));
    }
    let mut inst = assemble_instance(&exemplars, query).unwrap();
    inst.dataset = words(rng, 1, 2);
    inst
}

/// Mini corpus inputs: a VQA-like, a video-like and an entity-box-like
/// dataset plus a manifest over them.
pub struct MiniMic {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub output: PathBuf,
}

pub struct MiniMicConfig {
    pub per_dataset: usize,
    pub budget: u64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for MiniMicConfig {
    fn default() -> Self {
        MiniMicConfig {
            per_dataset: 120,
            budget: 1000,
            seed: 7,
            workers: 1,
        }
    }
}

fn json_line(value: serde_json::Value, out: &mut Vec<u8>) {
    serde_json::to_writer(&mut *out, &value).unwrap();
    out.push(b'\n');
}

pub fn write_mini_mic(dir: &Path, cfg: &MiniMicConfig) -> MiniMic {
    use serde_json::json;
    let mut rng = mic_core::seed::substream(99, &[b"mini-mic"]);
    let nouns = ["dog", "cat", "bus", "kite", "cake", "horse", "bench", "clock"];

    let mut vqa = Vec::new();
    for i in 0..cfg.per_dataset {
        let noun = nouns.choose(&mut rng).unwrap();
        json_line(
            json!({
                "id": format!("vqa-{i}"),
                "images": [{"uri": format!("coco/{i:06}.jpg"), "width": 640, "height": 480}],
                "question": format!("How many {noun}s are in the picture?"),
                "answer": rng.gen_range(0..6).to_string(),
            }),
            &mut vqa,
        );
    }
    // one bad line to exercise the reject path
    vqa.extend_from_slice(b"{\"id\": \"broken\", \"images\": [\"x.jpg\"], \"answer\": \"no question\"}\n");

    let mut video = Vec::new();
    for i in 0..cfg.per_dataset {
        let frames: u32 = if i % 10 == 0 { rng.gen_range(3..8) } else { rng.gen_range(8..900) };
        json_line(
            json!({
                "id": i,
                "video": format!("msrvtt/video{i}.mp4"),
                "video_frame_count": frames,
                "question": format!("what is the {} doing", nouns.choose(&mut rng).unwrap()),
                "answer": format!("{} around", ["running", "sitting", "jumping"].choose(&mut rng).unwrap()),
            }),
            &mut video,
        );
    }

    let mut entity = Vec::new();
    for i in 0..cfg.per_dataset {
        let n_entities = rng.gen_range(1..=4);
        let mut boxes = BTreeMap::new();
        for e in 0..n_entities {
            let x0 = rng.gen_range(0..500);
            let y0 = rng.gen_range(0..300);
            boxes.insert(
                format!("person{e}"),
                vec![x0, y0, rng.gen_range(x0 + 1..=640), rng.gen_range(y0 + 1..=480)],
            );
        }
        let a = rng.gen_range(0..n_entities);
        let b = rng.gen_range(0..n_entities);
        json_line(
            json!({
                "id": format!("vcr-{i}"),
                "images": [{"uri": format!("vcr/scene{i}.jpg"), "width": 640, "height": 480}],
                "question": format!("Why is person{a} pointing at person{b}?"),
                "options": [format!("person{b} asked for help"), "It is raining".to_string(), format!("person{a} is lost")],
                "answer": format!("person{b} asked for help"),
                "entity_boxes": boxes,
            }),
            &mut entity,
        );
    }

    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("vqa.jsonl"), vqa).unwrap();
    fs::write(dir.join("video.jsonl"), video).unwrap();
    fs::write(dir.join("entity.jsonl"), entity).unwrap();
    let manifest = dir.join("manifest.toml");
    let output = dir.join("corpus.jsonl");
    let mut f = fs::File::create(&manifest).unwrap();
    write!(
        f,
        r#"output = "corpus.jsonl"
workers = {workers}

[mix]
seed = {seed}
budget = {budget}

[[datasets]]
name = "vqa"
adapter = "vqa"
path = "vqa.jsonl"
task = "vqav2"
n_shots = 2

[[datasets]]
name = "video"
adapter = "video"
path = "video.jsonl"
task = "video_qa"

[[datasets]]
name = "vcr"
adapter = "entity_boxes"
path = "entity.jsonl"
task = "vcr"
"#,
        workers = cfg.workers,
        seed = cfg.seed,
        budget = cfg.budget,
    )
    .unwrap();
    MiniMic {
        dir: dir.to_path_buf(),
        manifest,
        output,
    }
}

/// Report JSON with the timing section removed.
pub fn report_without_throughput(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("throughput");
    v
}
