//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p seatwatch-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seatwatch_core::detect::oracle::{ClassifierNoise, DetectorNoise, OracleClassifier, OracleDetector};
use seatwatch_core::detect::{BoundingBox, Detection, ObjectLabel};
use seatwatch_core::imaging::io::{SCENE_KEYWORD, encode_jpeg, encode_png};
use seatwatch_core::imaging::{
    Hsv, HsvImage, RasterImage, equalize_v, hsv_to_rgb_pixel, mean_v, preprocess, rgb_to_hsv, rgb_to_hsv_pixel,
};
use seatwatch_core::metrics::{
    ConfusionCounts, LossSample, accuracy, average_precision, mae, match_detections, pr_curve, recognition_rate,
};
use seatwatch_core::pipeline::{FrameMeta, PipelineConfig, SeatState, compare_serial_vs_full, process_frame};
use seatwatch_core::scenegen::{DatasetParams, ItemKind, SceneSpec, render, sample_spec};
use seatwatch_core::seatgrid::grid_layout;
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Metric fixtures

fn accuracy_fixture() -> Outcome {
    let c = ConfusionCounts::new(26, 6, 5, 26);
    let got = accuracy(&c).map_err(|e| e.to_string())?;
    let oracle = (26.0 + 26.0) / (26.0 + 6.0 + 5.0 + 26.0);
    ensure(close(got, 52.0 / 63.0, 1e-12) && close(got, oracle, 1e-12), || format!("accuracy {got}"))?;
    Ok(format!("accuracy(26,6,5,26) = {got:.12}"))
}

fn mae_fixture() -> Outcome {
    let cases: [(&[f64], &[f64], f64); 5] = [
        (&[3.0, 5.0, 2.0], &[2.0, 3.0, 3.0], 4.0 / 3.0),
        (&[0.0, 0.0], &[0.0, 0.0], 0.0),
        (&[10.0], &[7.0], 3.0),
        (&[1.5, -2.0, 4.0, 0.0], &[1.0, 2.0, 4.0, 0.5], 5.0 / 4.0),
        (&[16.0, 0.0, 8.0], &[0.0, 16.0, 8.0], 32.0 / 3.0),
    ];
    for (p, a, want) in cases {
        let got = mae(&LossSample::new(p.to_vec(), a.to_vec())).map_err(|e| e.to_string())?;
        ensure(close(got, want, 1e-12), || format!("mae({p:?}, {a:?}) = {got}, want {want}"))?;
    }
    Ok(format!("{} cases including 4/3", cases.len()))
}

fn recognition_fixture() -> Outcome {
    let a = recognition_rate(11, 22).map_err(|e| e.to_string())?;
    let b = recognition_rate(17, 22).map_err(|e| e.to_string())?;
    ensure(a == 0.5, || format!("11/22 gave {a}"))?;
    ensure(b == 17.0 / 22.0 && (b * 100.0).round() == 77.0, || format!("17/22 gave {b}"))?;
    Ok(format!("11/22 = {a}, 17/22 = {b:.4}"))
}

/// Interpolated precision at each distinct recall level, taken as the best
/// precision at any cut reaching at least that recall.
fn ap_oracle(points: &[(f64, f64)]) -> f64 {
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).filter(|r| *r > 0.0).collect();
    recalls.sort_by(f64::total_cmp);
    recalls.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        area += (r - prev) * best;
        prev = r;
    }
    area
}

fn ap_enumeration() -> Outcome {
    let truth_boxes = [
        BoundingBox::new(0.0, 0.0, 0.2, 0.2).unwrap(),
        BoundingBox::new(0.4, 0.4, 0.2, 0.2).unwrap(),
        BoundingBox::new(0.7, 0.1, 0.2, 0.2).unwrap(),
    ];
    let background = BoundingBox::new(0.1, 0.7, 0.2, 0.2).unwrap();
    let confidences = [0.9, 0.7, 0.5];
    // A detection is (position, confidence); positions 0..3 sit exactly on a
    // truth box slot, 3 is background.
    let options: Vec<(usize, f64)> = (0..4).flat_map(|p| confidences.iter().map(move |&c| (p, c))).collect();
    let mut sets: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..6 {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().copied().unwrap_or(0);
            for o in start..options.len() {
                let mut t = s.clone();
                t.push(o);
                next.push(t);
            }
        }
        sets.extend(next.iter().cloned());
        frontier = next;
    }
    let mut checked = 0usize;
    for n_truth in 1..=3usize {
        let truth = &truth_boxes[..n_truth];
        for set in &sets {
            let dets: Vec<Detection> = set
                .iter()
                .map(|&o| {
                    let (pos, confidence) = options[o];
                    let bbox = if pos < 3 { truth_boxes[pos] } else { background };
                    Detection { bbox, label: ObjectLabel::Person, confidence }
                })
                .collect();
            let outcome = match_detections(&dets, truth, 0.5);
            let got = average_precision(&pr_curve(&outcome.flagged, n_truth));

            // Oracle: the first detection (by confidence) landing on a present
            // truth slot is a hit, every other one a false positive.
            let mut points = Vec::new();
            for &cut in &confidences {
                let kept: Vec<(usize, f64)> = set.iter().map(|&o| options[o]).filter(|d| d.1 >= cut).collect();
                if kept.is_empty() || !set.iter().any(|&o| options[o].1 == cut) {
                    continue;
                }
                let hit: BTreeSet<usize> = kept.iter().map(|d| d.0).filter(|&p| p < n_truth).collect();
                let tp = hit.len() as f64;
                points.push((tp / n_truth as f64, tp / kept.len() as f64));
            }
            let want = ap_oracle(&points);
            if !close(got, want, 1e-9) {
                return Err(format!("set {set:?} over {n_truth} truth: ap {got} vs oracle {want}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} detection sets"))
}

// Imaging properties

fn random_image(rng: &mut ChaCha8Rng) -> RasterImage {
    let (w, h) = (rng.random_range(1..=24u32), rng.random_range(1..=24u32));
    let n = (w * h) as usize;
    let palette: Vec<[u8; 3]> = match rng.random_range(0..3) {
        0 => Vec::new(),
        1 => (0..rng.random_range(1..=5)).map(|_| rng.random()).collect(),
        _ => two_level_palette(rng),
    };
    let pixels = (0..n)
        .map(|_| if palette.is_empty() { rng.random() } else { palette[rng.random_range(0..palette.len())] })
        .collect();
    RasterImage::new(w, h, pixels).unwrap()
}

/// Colours with exactly two distinct V levels.
fn two_level_palette(rng: &mut ChaCha8Rng) -> Vec<[u8; 3]> {
    let lo = rng.random_range(0..255u8);
    let hi = rng.random_range(lo + 1..=255u8);
    let scaled = |v: u8, rng: &mut ChaCha8Rng| {
        let mut c = [rng.random_range(0..=v), rng.random_range(0..=v), rng.random_range(0..=v)];
        c[rng.random_range(0..3)] = v;
        c
    };
    let mut p: Vec<[u8; 3]> = (0..rng.random_range(1..=3)).map(|_| scaled(lo, rng)).collect();
    p.extend((0..rng.random_range(1..=3)).map(|_| scaled(hi, rng)));
    p
}

fn levels(img: &HsvImage) -> Vec<u8> {
    img.pixels().iter().map(Hsv::level).collect()
}

fn equalization_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut two_level = 0;
    for i in 0..10_000 {
        let img = random_image(&mut rng);
        let hsv = rgb_to_hsv(&img);
        let eq = equalize_v(&hsv);
        for (a, b) in hsv.pixels().iter().zip(eq.pixels()) {
            ensure(a.h.to_bits() == b.h.to_bits() && a.s.to_bits() == b.s.to_bits(), || {
                format!("image {i}: hue/saturation changed {a:?} -> {b:?}")
            })?;
        }
        let (before, after) = (levels(&hsv), levels(&eq));
        let mut map: BTreeMap<u8, u8> = BTreeMap::new();
        for (&a, &b) in before.iter().zip(&after) {
            ensure(*map.entry(a).or_insert(b) == b, || format!("image {i}: level {a} mapped two ways"))?;
        }
        let outs: Vec<u8> = map.values().copied().collect();
        ensure(outs.windows(2).all(|w| w[0] <= w[1]), || format!("image {i}: V map not monotone {map:?}"))?;
        let again = levels(&equalize_v(&eq));
        ensure(again.iter().zip(&after).all(|(x, y)| x.abs_diff(*y) <= 1), || format!("image {i}: not idempotent"))?;
        if map.len() == 2 {
            two_level += 1;
            ensure(outs == [0, 255], || format!("image {i}: two levels mapped to {outs:?}"))?;
        }
    }
    ensure(two_level >= 1000, || format!("only {two_level} two-level images generated"))?;
    Ok(format!("10000 images ({two_level} two-level), 0 violations"))
}

fn colour_round_trip() -> Outcome {
    let mut worst = 0u8;
    for r in 0..=255u8 {
        for g in 0..=255u8 {
            for b in 0..=255u8 {
                let back = hsv_to_rgb_pixel(rgb_to_hsv_pixel([r, g, b]));
                let dev = r.abs_diff(back[0]).max(g.abs_diff(back[1])).max(b.abs_diff(back[2]));
                if dev > 1 {
                    return Err(format!("({r},{g},{b}) -> {back:?}"));
                }
                worst = worst.max(dev);
            }
        }
    }
    Ok(format!("all 16777216 triples, max deviation {worst}"))
}

// Pipeline properties

const SCENE_SIZE: u32 = 160;

fn scene_params(seed: u64) -> DatasetParams {
    DatasetParams {
        gain_range: (0.3, 2.5),
        max_shear: 0.3,
        width: SCENE_SIZE,
        height: SCENE_SIZE,
        ..DatasetParams::new(1000, grid_layout("acceptance", 4, 4).unwrap(), seed)
    }
}

fn zero_noise(spec: &SceneSpec) -> (OracleDetector, OracleClassifier) {
    (
        OracleDetector::new(spec, SCENE_SIZE, SCENE_SIZE, DetectorNoise::default()).unwrap(),
        OracleClassifier::new(spec, SCENE_SIZE, SCENE_SIZE, ClassifierNoise::default()).unwrap(),
    )
}

fn oracle_closure() -> Outcome {
    let params = scene_params(1);
    let mut verdicts = 0;
    for i in 0..1000 {
        let spec = sample_spec(&params, i);
        let (img, truth) = render(&spec, SCENE_SIZE, SCENE_SIZE).map_err(|e| e.to_string())?;
        let (d, c) = zero_noise(&spec);
        let report = process_frame(&img, &spec.layout, &d, &c, &PipelineConfig::default(), &FrameMeta::new(format!("s{i}"), 0.0))
            .map_err(|e| e.to_string())?;
        let states = report.states();
        for (seat, want) in &truth.seat_states {
            ensure(states.get(seat) == Some(want), || format!("scene {i} seat {seat}: {:?} vs {want:?}", states.get(seat)))?;
            verdicts += 1;
        }
    }
    ensure(verdicts == 16_000, || format!("{verdicts} verdicts"))?;
    Ok("16000 seat verdicts, 0 mismatches".into())
}

fn serial_saving() -> Outcome {
    let params = scene_params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut saved = 0usize;
    for i in 0..1000 {
        let spec = sample_spec(&params, i);
        let (img, truth) = render(&spec, SCENE_SIZE, SCENE_SIZE).map_err(|e| e.to_string())?;
        let (d, c) = zero_noise(&spec);
        let oos: BTreeSet<u32> = (1..=16).filter(|_| rng.random_bool(0.1)).collect();
        let cfg = PipelineConfig { out_of_service: oos.clone(), ..PipelineConfig::default() };
        let cmp = compare_serial_vs_full(&img, &spec.layout, &d, &c, &cfg, &FrameMeta::new(format!("s{i}"), 0.0))
            .map_err(|e| e.to_string())?;
        let persons_in_service = truth.person_boxes.keys().filter(|s| !oos.contains(s)).count();
        let want = 16 - persons_in_service - oos.len();
        ensure(cmp.serial.classifier_invocations == want, || {
            format!("scene {i}: {} invocations, want {want}", cmp.serial.classifier_invocations)
        })?;
        ensure(cmp.equivalent(), || format!("scene {i}: serial and full verdicts differ on {:?}", cmp.mismatched))?;
        saved += cmp.saved;
    }
    Ok(format!("1000 frames, identity holds, {saved} classifier calls saved"))
}

fn field_scene(items: &[u32]) -> SceneSpec {
    let mut spec = SceneSpec::empty(grid_layout("field", 4, 4).unwrap(), 20);
    for seat in 1..=16 {
        spec = if items.contains(&seat) { spec.with_item(seat, ItemKind::Book) } else { spec.with_person(seat) };
    }
    spec
}

const FIELD_CASES: [&[u32]; 3] = [&[6, 12], &[7, 14, 16], &[1, 3, 5, 8, 9, 11, 12, 14]];

fn field_scenarios() -> Outcome {
    for items in FIELD_CASES {
        let spec = field_scene(items);
        let (img, _) = render(&spec, 256, 256).map_err(|e| e.to_string())?;
        let d = OracleDetector::new(&spec, 256, 256, DetectorNoise::default()).unwrap();
        let c = OracleClassifier::new(&spec, 256, 256, ClassifierNoise::default()).unwrap();
        let report = process_frame(&img, &spec.layout, &d, &c, &PipelineConfig::default(), &FrameMeta::new("field", 0.0))
            .map_err(|e| e.to_string())?;
        let held = report.seats_in(SeatState::SuspectedOccupancy);
        ensure(held == items, || format!("items {items:?}: flagged {held:?}"))?;
        let occupied = report.seats_in(SeatState::OccupiedByPerson).len();
        ensure(occupied == 16 - items.len(), || format!("items {items:?}: {occupied} occupied"))?;
    }
    Ok("{6,12}, {7,14,16}, {1,3,5,8,9,11,12,14} flagged exactly".into())
}

fn field_scenarios_cli(work: &Path) -> Outcome {
    for (n, items) in FIELD_CASES.iter().enumerate() {
        let png = work.join(format!("field{n}.png"));
        let list = items.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        run_cli(&["render", png.to_str().unwrap(), "--items", &list, "--persons-elsewhere", "--seed", "20"])?;
        let out = run_cli(&["detect", png.to_str().unwrap()])?;
        let doc: Value = serde_json::from_str(&out).map_err(|e| format!("detect output: {e}"))?;
        let held: Vec<u64> = doc["seats"]
            .as_array()
            .ok_or("no seats array")?
            .iter()
            .filter(|s| s["state"] == "suspected_occupancy")
            .map(|s| s["seat_id"].as_u64().unwrap_or(0))
            .collect();
        let want: Vec<u64> = items.iter().map(|&s| s as u64).collect();
        ensure(held == want, || format!("items {items:?}: cli flagged {held:?}"))?;
        ensure(doc["classifier_invocations"] == items.len(), || format!("invocations {}", doc["classifier_invocations"]))?;
    }
    Ok("render + detect flag the same seats".into())
}

fn exposure_repair() -> Outcome {
    let params = DatasetParams { width: 128, height: 128, ..DatasetParams::new(50, grid_layout("exp", 4, 4).unwrap(), 3) };
    let mut checked = 0;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for gain in [0.1, 0.5, 2.0, 10.0] {
        for i in 0..params.n {
            let mut spec = sample_spec(&params, i);
            spec.lighting = gain;
            let (img, _) = render(&spec, 128, 128).map_err(|e| e.to_string())?;
            let distinct: BTreeSet<u8> = levels(&rgb_to_hsv(&img)).into_iter().collect();
            if distinct.len() < 2 {
                continue;
            }
            let m = mean_v(&rgb_to_hsv(&preprocess(&img)));
            ensure((0.3..=0.7).contains(&m), || format!("gain {gain} scene {i}: mean_v {m:.4} after preprocessing"))?;
            lo = lo.min(m);
            hi = hi.max(m);
            checked += 1;
        }
    }
    ensure(checked > 0, || "no scene had two V levels".into())?;
    Ok(format!("{checked} scenes, mean_v in [{lo:.3}, {hi:.3}]"))
}

// Command-line and service helpers

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_seatwatch")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).env("RUST_LOG", "warn").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("seatwatch {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism(work: &Path) -> Outcome {
    let (a, b) = (work.join("ds_a"), work.join("ds_b"));
    for d in [&a, &b] {
        run_cli(&["gen-dataset", d.to_str().unwrap(), "--n", "24", "--seed", "5", "--max-shear", "0.3", "--gain-lo", "0.4", "--gain-hi", "2", "--train-ratio", "0.75"])?;
    }
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    ensure(!ta.is_empty() && ta == tb, || "gen-dataset outputs differ".into())?;
    let noisy = ["--sigma", "0.1", "--p-miss", "0.1", "--fp-rate", "0.5", "--cls-sigma", "0.1", "--flip-prob", "0.05", "--seed", "9"];
    let mut outputs = Vec::new();
    for (n, d) in [&a, &b].iter().enumerate() {
        let (json, csv) = (work.join(format!("eval{n}.json")), work.join(format!("pr{n}.csv")));
        let mut args = vec!["evaluate", d.to_str().unwrap(), "--out", json.to_str().unwrap(), "--pr-csv", csv.to_str().unwrap()];
        args.extend(noisy);
        run_cli(&args)?;
        outputs.push((std::fs::read(&json).unwrap(), std::fs::read(&csv).unwrap()));
    }
    ensure(outputs[0] == outputs[1], || "evaluate outputs differ".into())?;
    Ok(format!("{} dataset files and evaluate reports identical", ta.len()))
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(db: &Path) -> Result<Server, String> {
        let mut child = Command::new(bin())
            .args(["serve", "--bind", "127.0.0.1:0", "--db", db.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stdout = child.stdout.take().ok_or("no stdout")?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if let Some(addr) = line.strip_prefix("listening on ") {
                    let _ = tx.send(addr.to_string());
                }
            }
        });
        let addr = rx.recv_timeout(Duration::from_secs(30)).map_err(|_| "service did not start".to_string())?;
        Ok(Server { child, base: format!("http://{addr}") })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn get(base: &str, path: &str) -> Result<(u16, Vec<u8>), String> {
    let mut r = agent().get(&format!("{base}{path}")).call().map_err(|e| e.to_string())?;
    let body = r.body_mut().read_to_vec().map_err(|e| e.to_string())?;
    Ok((r.status().as_u16(), body))
}

fn get_json(base: &str, path: &str) -> Result<Value, String> {
    let (status, body) = get(base, path)?;
    ensure(status == 200, || format!("GET {path}: {status}"))?;
    serde_json::from_slice(&body).map_err(|e| e.to_string())
}

fn post(base: &str, path: &str, ctype: &str, body: &[u8]) -> Result<(u16, Value), String> {
    let mut r = agent()
        .post(&format!("{base}{path}"))
        .header("content-type", ctype)
        .send(body)
        .map_err(|e| e.to_string())?;
    let text = r.body_mut().read_to_string().map_err(|e| e.to_string())?;
    Ok((r.status().as_u16(), serde_json::from_str(&text).unwrap_or(Value::Null)))
}

fn create_room(base: &str, room: &str) -> Result<(), String> {
    let body = serde_json::json!({ "room_id": room, "grid": { "rows": 4, "cols": 4 } }).to_string();
    let (status, v) = post(base, "/rooms", "application/json", body.as_bytes())?;
    ensure(status == 201, || format!("create room {room}: {status} {v}"))
}

fn scene_png(spec: &SceneSpec) -> Vec<u8> {
    let (img, _) = render(spec, 128, 128).unwrap();
    let json = serde_json::to_string(spec).unwrap();
    encode_png(&img, &[(SCENE_KEYWORD, &json)]).unwrap()
}

fn room_scenes(room: &str, n: usize, seed: u64) -> Vec<SceneSpec> {
    let params = DatasetParams { person_prob: 0.4, ..DatasetParams::new(n, grid_layout(room, 4, 4).unwrap(), seed) };
    (0..n).map(|i| sample_spec(&params, i)).collect()
}

fn post_frame(base: &str, room: &str, id: &str, ts: f64, png: &[u8]) -> Result<(u16, Value), String> {
    post(base, &format!("/rooms/{room}/frames?frame_id={id}&timestamp={ts}"), "image/png", png)
}

/// Everything a client could read back about `rooms`, minus live status.
fn snapshot(base: &str, rooms: &[&str]) -> Result<Value, String> {
    let mut snap = serde_json::Map::new();
    snap.insert("rooms".into(), get_json(base, "/rooms")?);
    snap.insert("announcements".into(), get_json(base, "/announcements")?);
    for room in rooms {
        snap.insert(format!("{room}/seats"), get_json(base, &format!("/rooms/{room}/seats"))?);
        for seat in 1..=16 {
            snap.insert(format!("{room}/{seat}"), get_json(base, &format!("/rooms/{room}/seats/{seat}/history"))?);
        }
        let (status, png) = get(base, &format!("/rooms/{room}/frames/last"))?;
        snap.insert(format!("{room}/last"), serde_json::json!({ "status": status, "len": png.len(), "sum": png.iter().map(|&b| b as u64).sum::<u64>() }));
    }
    Ok(Value::Object(snap))
}

fn service_restart(work: &Path) -> Outcome {
    let db = work.join("restart.db");
    let server = Server::start(&db)?;
    let rooms = ["north", "south"];
    let mut frames = 0;
    for (r, room) in rooms.iter().enumerate() {
        create_room(&server.base, room)?;
        for (i, spec) in room_scenes(room, 3, r as u64).iter().enumerate() {
            let (status, v) = post_frame(&server.base, room, &format!("f{i}"), 100.0 + i as f64, &scene_png(spec))?;
            ensure(status == 201, || format!("frame {room}/{i}: {status} {v}"))?;
            frames += 1;
        }
    }
    for title in ["Exam week", "Quiet floor"] {
        let body = serde_json::json!({ "title": title, "body": "Seats are released after 30 minutes." }).to_string();
        let (status, _) = post(&server.base, "/announcements", "application/json", body.as_bytes())?;
        ensure(status == 201, || format!("announcement: {status}"))?;
    }
    let before = snapshot(&server.base, &rooms)?;
    server.kill();

    let server = Server::start(&db)?;
    let after = snapshot(&server.base, &rooms)?;
    ensure(before == after, || "state differs after kill -9 and restart".into())?;
    let listed = after["rooms"].as_array().map_or(0, Vec::len);
    ensure(listed == 2, || format!("{listed} rooms after restart"))?;
    let (status, _) = post_frame(&server.base, "north", "f9", 200.0, &scene_png(&room_scenes("north", 1, 9)[0]))?;
    ensure(status == 201, || format!("ingest after restart: {status}"))?;
    Ok(format!("2 rooms, {frames} frames, 2 announcements survive SIGKILL"))
}

fn service_truncated_upload(work: &Path) -> Outcome {
    let db = work.join("truncated.db");
    let server = Server::start(&db)?;
    create_room(&server.base, "west")?;
    let scenes = room_scenes("west", 2, 4);
    let good = scene_png(&scenes[0]);
    let (img, _) = render(&scenes[1], 128, 128).unwrap();
    let bad_png = scene_png(&scenes[1]);
    let bad_jpeg = encode_jpeg(&img, 90).unwrap();
    let truncated = [&bad_png[..bad_png.len() / 2], &bad_jpeg[..bad_jpeg.len() * 2 / 3], &bad_png[..40]];

    // Before any frame, and after one good frame.
    for stage in 0..2 {
        if stage == 1 {
            let (status, v) = post_frame(&server.base, "west", "good", 10.0, &good)?;
            ensure(status == 201, || format!("good frame: {status} {v}"))?;
        }
        let before = snapshot(&server.base, &["west"])?;
        let status_before = get_json(&server.base, "/rooms/west/status")?;
        for (k, bytes) in truncated.iter().enumerate() {
            let (status, v) = post_frame(&server.base, "west", &format!("bad{k}"), 20.0 + k as f64, bytes)?;
            ensure(status == 422 && v["code"] == "undecodable_image", || format!("truncated upload {k}: {status} {v}"))?;
        }
        ensure(snapshot(&server.base, &["west"])? == before, || format!("stage {stage}: truncated upload changed state"))?;
        ensure(get_json(&server.base, "/rooms/west/status")? == status_before, || "status changed".into())?;
    }
    let before = snapshot(&server.base, &["west"])?;
    server.kill();
    let server = Server::start(&db)?;
    ensure(snapshot(&server.base, &["west"])? == before, || "truncated uploads visible after restart".into())?;
    Ok("3 truncated uploads x 2 stages rejected with 422, nothing persisted".into())
}

fn subscribe(base: &str, room: &str) -> Result<mpsc::Receiver<Value>, String> {
    let addr = base.trim_start_matches("http://").to_string();
    let mut stream = TcpStream::connect(&addr).map_err(|e| e.to_string())?;
    write!(stream, "GET /rooms/{room}/alerts HTTP/1.1\r\nHost: {addr}\r\nAccept: text/event-stream\r\n\r\n")
        .map_err(|e| e.to_string())?;
    let (ready_tx, ready_rx) = mpsc::channel();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        let mut status = String::new();
        let _ = reader.read_line(&mut status);
        let _ = ready_tx.send(status.contains(" 200 "));
        let mut pending_alert = false;
        for line in reader.lines().map_while(Result::ok) {
            let line = line.trim_end();
            if line == "event: alert" {
                pending_alert = true;
            } else if let Some(data) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:"))
                && pending_alert
            {
                pending_alert = false;
                if tx.send(serde_json::from_str(data).unwrap_or(Value::Null)).is_err() {
                    return;
                }
            }
        }
    });
    let ok = ready_rx.recv_timeout(Duration::from_secs(10)).map_err(|_| "alert stream did not open".to_string())?;
    ensure(ok, || "alert stream refused".into())?;
    Ok(rx)
}

fn service_alerts(work: &Path) -> Outcome {
    let server = Server::start(&work.join("alerts.db"))?;
    create_room(&server.base, "east")?;
    let alerts = subscribe(&server.base, "east")?;
    let scenes = room_scenes("east", 20, 11);

    // Expected transitions, from ground truth: a fresh seat counts as free.
    let mut previous: BTreeMap<u32, SeatState> = (1..=16).map(|s| (s, SeatState::Free)).collect();
    let mut expected = Vec::new();
    for (i, spec) in scenes.iter().enumerate() {
        let (_, truth) = render(spec, 128, 128).unwrap();
        for (&seat, &state) in &truth.seat_states {
            if state == SeatState::SuspectedOccupancy && previous[&seat] != SeatState::SuspectedOccupancy {
                expected.push((format!("f{i}"), seat));
            }
            previous.insert(seat, state);
        }
        let (status, v) = post_frame(&server.base, "east", &format!("f{i}"), 1000.0 + i as f64, &scene_png(spec))?;
        ensure(status == 201, || format!("frame {i}: {status} {v}"))?;
    }
    let mut got = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    while got.len() < expected.len() && Instant::now() < deadline {
        if let Ok(v) = alerts.recv_timeout(Duration::from_millis(200)) {
            got.push(v);
        }
    }
    while let Ok(v) = alerts.recv_timeout(Duration::from_millis(500)) {
        got.push(v);
    }
    let mut seen: Vec<(String, u32)> = got
        .iter()
        .map(|v| (v["frame_id"].as_str().unwrap_or("").to_string(), v["seat_id"].as_u64().unwrap_or(0) as u32))
        .collect();
    seen.sort();
    expected.sort();
    ensure(seen == expected, || format!("alerts {seen:?}, expected {expected:?}"))?;
    ensure(got.iter().all(|v| v["to"] == "suspected_occupancy"), || "alert with the wrong target state".into())?;
    Ok(format!("20 frames, {} transitions, {} events", expected.len(), got.len()))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("accuracy fixture", Box::new(accuracy_fixture)),
        ("mae fixture", Box::new(mae_fixture)),
        ("recognition rate fixture", Box::new(recognition_fixture)),
        ("average precision vs brute-force oracle", Box::new(ap_enumeration)),
        ("histogram equalization properties", Box::new(equalization_properties)),
        ("rgb/hsv round trip", Box::new(colour_round_trip)),
        ("oracle end-to-end closure", Box::new(oracle_closure)),
        ("field scenarios", Box::new(field_scenarios)),
        ("field scenarios via cli", Box::new(|| field_scenarios_cli(w))),
        ("serial-saving identity", Box::new(serial_saving)),
        ("exposure repair", Box::new(exposure_repair)),
        ("service kill and restart", Box::new(|| service_restart(w))),
        ("service truncated upload", Box::new(|| service_truncated_upload(w))),
        ("service alert count", Box::new(|| service_alerts(w))),
        ("gen-dataset and evaluate determinism", Box::new(|| determinism(w))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({secs:.1}s)");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    let _ = std::io::stdout().flush();
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
