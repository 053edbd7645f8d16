//! Authored fixture corpora.

use morevqa::eval::EvalItem;
use morevqa::tools::{BBox, FixtureCorpus, FrameRecord, ObjectRecord, WorldFixture};
use morevqa::types::{QAItem, QAType, TemporalConjunction};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn object(name: &str, slot: usize) -> ObjectRecord {
    let x = 0.05 + 0.15 * (slot % 5) as f64;
    ObjectRecord { name: name.into(), bbox: BBox::new(x, 0.2, x + 0.1, 0.6).expect("valid box") }
}

pub fn frame(i: usize, caption: &str, objects: &[&str], actions: &[&str]) -> FrameRecord {
    FrameRecord {
        frame_id: i,
        objects: objects.iter().enumerate().map(|(k, o)| object(o, k)).collect(),
        actions: actions.iter().map(|a| a.to_string()).collect(),
        caption: caption.into(),
        ocr_text: None,
    }
}

pub const ORACLE_FRAMES: usize = 40;
const FILLERS: [&str; 8] = ["kite", "piano", "candle", "ladder", "mirror", "helmet", "basket", "violin"];

/// One authored oracle video with its question.
pub struct OracleCase {
    pub fixture: WorldFixture,
    pub item: EvalItem,
    pub template: &'static str,
}

fn candidates(answer: &str, distractor: &str, variant: usize) -> (Vec<String>, usize) {
    let mut c: Vec<String> = vec![answer.into(), distractor.into()];
    c.extend(FILLERS.iter().cycle().skip(variant).take(3).map(|s| s.to_string()));
    c.rotate_right(variant % 5);
    let idx = c.iter().position(|x| x == answer).expect("answer present");
    (c, idx)
}

fn build(
    id: usize,
    template: &'static str,
    neutral: &str,
    mut frames: Vec<FrameRecord>,
    question: String,
    cands: (Vec<String>, usize),
    target: std::ops::Range<usize>,
) -> OracleCase {
    frames.sort_by_key(|f| f.frame_id);
    let mut all: Vec<FrameRecord> = (0..ORACLE_FRAMES).map(|i| frame(i, neutral, &[], &[])).collect();
    for f in frames {
        let i = f.frame_id;
        all[i] = f;
    }
    let video_id = format!("oracle{id:02}");
    let fixture = WorldFixture { video_id: video_id.clone(), fps: 1.0, frames: all, qa_notes: None };
    let mut qa = QAItem::multiple_choice(question, cands.0, cands.1);
    qa.gt_window_s = Some((target.start as f64, target.end as f64));
    let mut item = EvalItem::new(format!("q{id:02}"), video_id, qa);
    item.subset = Some(template.to_owned());
    OracleCase { fixture, item, template }
}

/// Thirty videos whose answers can only be read off correctly trimmed and
/// grounded frames; captions elsewhere favour a distractor candidate.
pub fn oracle_cases() -> Vec<OracleCase> {
    (0..30).map(oracle_case).collect()
}

fn oracle_case(id: usize) -> OracleCase {
    let v = id / 6;
    match id % 6 {
        0 => {
            let (s, act, ans, dis) = [
                ("cat", "lying on its back", "toy", "blanket"),
                ("dog", "rolling in the grass", "stick", "leash"),
                ("boy", "jumping on the bed", "pillow", "lamp"),
                ("woman", "running down the street", "bus", "bench"),
                ("bird", "flapping its wings", "feeder", "branch"),
            ][v];
            let event = format!("{s} {act}");
            let mut frames: Vec<FrameRecord> =
                (0..8).map(|i| frame(i, &format!("a {dis} on the floor"), &[dis], &[])).collect();
            frames.extend((30..36).map(|i| frame(i, &event, &[s, ans], &[&event])));
            let q = format!("why is the {s} {act} at the end of the video?");
            build(id, "why_end", "an empty room", frames, q, candidates(ans, dis, v), 30..36)
        }
        1 => {
            let (s, verb, ans, dis) = [
                ("dog", "playing", "ball", "bone"),
                ("girl", "painting", "brush", "crayon"),
                ("man", "fishing", "rod", "net"),
                ("kid", "building", "blocks", "sand"),
                ("chef", "cooking", "pan", "oven"),
            ][v];
            let caption = format!("{s} {verb} with");
            let mut frames: Vec<FrameRecord> = (16..22).map(|i| frame(i, &caption, &[s, ans], &[])).collect();
            frames.extend((32..40).map(|i| frame(i, &format!("a {dis} on the ground"), &[dis], &[])));
            let q = format!("what is the {s} {verb} with in the middle of the video?");
            build(id, "what_middle", "an empty yard", frames, q, candidates(ans, dis, v), 16..22)
        }
        2 => {
            let (adj, s, verb, ans, dis, ao, av) = [
                ("little", "girl", "holding", "flower", "umbrella", "bell", "rings"),
                ("old", "man", "reading", "letter", "newspaper", "phone", "buzzes"),
                ("young", "boy", "eating", "apple", "cookie", "door", "opens"),
                ("tall", "woman", "carrying", "bag", "box", "car", "stops"),
                ("small", "child", "drawing", "house", "tree", "dog", "barks"),
            ][v];
            let subject = format!("{adj} {s} {verb}");
            let mut frames: Vec<FrameRecord> =
                (0..12).map(|i| frame(i, &format!("{subject} {dis}"), &[s], &[])).collect();
            frames.extend((18..21).map(|i| frame(i, &format!("{ao} {av}"), &[ao], &[])));
            frames.extend((24..30).map(|i| frame(i, &format!("{subject} {ans}"), &[s], &[])));
            let q = format!("what is the {subject} after the {ao} {av}?");
            build(id, "what_after", "an empty street", frames, q, candidates(ans, dis, v), 24..30)
        }
        3 => {
            let (adj, s, verb, ans, dis, ao, av) = [
                ("old", "man", "carrying", "box", "chair", "door", "opens"),
                ("young", "girl", "wearing", "hat", "scarf", "bell", "rings"),
                ("tall", "boy", "kicking", "ball", "can", "whistle", "blows"),
                ("little", "dog", "chewing", "shoe", "toy", "cat", "enters"),
                ("small", "baby", "holding", "spoon", "cup", "light", "flashes"),
            ][v];
            let subject = format!("{adj} {s} {verb}");
            let mut frames: Vec<FrameRecord> =
                (8..14).map(|i| frame(i, &format!("{subject} {ans}"), &[s], &[])).collect();
            frames.extend((18..21).map(|i| frame(i, &format!("{ao} {av}"), &[ao], &[])));
            frames.extend((24..40).map(|i| frame(i, &format!("{subject} {dis}"), &[s], &[])));
            let q = format!("what is the {subject} before the {ao} {av}?");
            build(id, "what_before", "an empty hallway", frames, q, candidates(ans, dis, v), 8..14)
        }
        4 => {
            let (one, many, count, dis) = [
                ("balloon", "balloons", 3, "4"),
                ("candle", "candles", 2, "5"),
                ("duck", "ducks", 4, "1"),
                ("chair", "chairs", 5, "2"),
                ("apple", "apples", 1, "3"),
            ][v];
            let objs = vec![one; count];
            let mut frames: Vec<FrameRecord> = (2..8).map(|i| frame(i, one, &objs, &[])).collect();
            frames.extend((30..40).map(|i| frame(i, &format!("{dis} {many} drifting away"), &[], &[])));
            let q = format!("how many {many} are there at the start of the video?");
            let cands: Vec<String> = (1..=5).map(|n| n.to_string()).collect();
            build(id, "count_start", "an empty sky", frames, q, (cands, count - 1), 2..8)
        }
        _ => {
            let (s, verb, obj, place, dis) = [
                ("chef", "cooking", "dinner", "kitchen", "garden"),
                ("man", "reading", "books", "library", "beach"),
                ("girl", "swimming", "laps", "pool", "forest"),
                ("boy", "playing", "football", "stadium", "office"),
                ("woman", "buying", "bread", "bakery", "park"),
            ][v];
            let mut frames: Vec<FrameRecord> = (0..8).map(|i| frame(i, &format!("a quiet {dis}"), &[], &[])).collect();
            frames.extend((30..36).map(|i| frame(i, &format!("{s} {verb} {obj} {place}"), &[s], &[])));
            let q = format!("where is the {s} {verb} {obj} at the end of the video?");
            build(id, "where_end", "a blank wall", frames, q, candidates(place, dis, v), 30..36)
        }
    }
}

pub fn corpus_of(fixtures: impl IntoIterator<Item = WorldFixture>) -> FixtureCorpus {
    FixtureCorpus::new(fixtures).expect("valid corpus")
}

const WORDS: [&str; 16] = [
    "red", "dog", "runs", "near", "the", "lake", "child", "throws", "ball", "green", "tree", "man", "sits", "bench",
    "bird", "flies",
];

fn phrase(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).expect("words")).collect::<Vec<_>>().join(" ")
}

/// Random captioned videos at 1 fps.
pub fn random_fixture(rng: &mut ChaCha8Rng, video_id: &str, frames: std::ops::Range<usize>) -> WorldFixture {
    let n = rng.gen_range(frames);
    let frames = (0..n)
        .map(|i| {
            let k = rng.gen_range(0..3);
            let objects: Vec<String> = (0..k).map(|_| WORDS.choose(rng).expect("words").to_string()).collect();
            let objects: Vec<&str> = objects.iter().map(String::as_str).collect();
            let actions = if rng.gen_bool(0.3) { vec![phrase(rng, 2)] } else { vec![] };
            let actions: Vec<&str> = actions.iter().map(String::as_str).collect();
            let mut f = frame(i, &phrase(rng, 4), &objects, &actions);
            if rng.gen_bool(0.2) {
                f.ocr_text = Some(phrase(rng, 2));
            }
            f
        })
        .collect();
    WorldFixture { video_id: video_id.into(), fps: 1.0, frames, qa_notes: None }
}

pub fn random_question(rng: &mut ChaCha8Rng) -> QAItem {
    let question = format!("what {} ?", phrase(rng, 4));
    let cands: Vec<String> = (0..5).map(|_| phrase(rng, 2)).collect();
    let answer = rng.gen_range(0..5);
    QAItem::multiple_choice(question, cands, answer)
}

/// Twenty hand-labelled questions with the type and conjunction the event
/// parser is expected to assign.
pub const LABELED: [(&str, &str, QAType, TemporalConjunction); 20] = [
    ("why is the dog barking?", "why", QAType::Why, TemporalConjunction::None),
    ("why did the man fall after he slipped on the ice?", "why", QAType::Why, TemporalConjunction::After),
    ("what is the girl holding?", "what", QAType::What, TemporalConjunction::None),
    ("what did the boy pick up before he left the room?", "what", QAType::What, TemporalConjunction::Before),
    ("how many birds are on the fence?", "counting", QAType::Counting, TemporalConjunction::None),
    ("how does the chef cut the onion?", "how", QAType::How, TemporalConjunction::None),
    ("where is the woman sitting?", "location", QAType::Location, TemporalConjunction::None),
    ("describe the scene", "description", QAType::Description, TemporalConjunction::None),
    ("explain why the baby is crying", "why", QAType::Explanation, TemporalConjunction::None),
    ("what does the sign say?", "what", QAType::What, TemporalConjunction::None),
    ("which toy does the cat play with while the owner watches?", "what", QAType::What, TemporalConjunction::While),
    ("why is the crowd cheering when the player scores?", "why", QAType::Why, TemporalConjunction::While),
    ("how many cars pass before the light turns green?", "counting", QAType::Counting, TemporalConjunction::Before),
    ("where did the ball land after the kick?", "location", QAType::Location, TemporalConjunction::After),
    ("is the door open?", "other", QAType::Other, TemporalConjunction::None),
    ("who opened the window?", "other", QAType::Other, TemporalConjunction::None),
    ("what happens at the end of the video?", "description", QAType::What, TemporalConjunction::None),
    ("why does the kid laugh as the clown falls?", "why", QAType::Why, TemporalConjunction::While),
    ("how is the table arranged?", "how", QAType::How, TemporalConjunction::None),
    ("what color is the car?", "what", QAType::What, TemporalConjunction::None),
];

pub fn labeled_fixture() -> WorldFixture {
    let frames = (0..20)
        .map(|i| match i % 4 {
            0 => frame(i, "a dog barking in a yard", &["dog"], &["barking"]),
            1 => frame(i, "a man slipping on ice", &["man"], &["slipping"]),
            2 => frame(i, "a girl holding a cup", &["girl", "cup"], &[]),
            _ => frame(i, "an empty room", &[], &[]),
        })
        .collect();
    WorldFixture { video_id: "labeled".into(), fps: 1.0, frames, qa_notes: None }
}

pub fn labeled_items() -> Vec<EvalItem> {
    LABELED
        .iter()
        .enumerate()
        .map(|(i, (q, label, _, _))| {
            let qa = QAItem::open_ended(*q, vec!["dog".into(), "dog".into()]);
            let mut item = EvalItem::new(format!("l{i:02}"), "labeled", qa);
            item.qtype_label = Some((*label).to_owned());
            item
        })
        .collect()
}
