//! Acceptance checks A1–A10 (plus the end-to-end service flow as A11).
//!
//! Runs as a plain binary: one `PASS`/`FAIL` line per criterion, nonzero
//! exit when any criterion fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use gradechat_core::classifier::{
    balance_by_downsampling, expand_prefixes, LabeledSentence, Predictor, PrefixExample, TrainConfig,
};
use gradechat_core::control::fudge::{generate_fudge_observed, generate_fudge_tokens, FudgeConfig};
use gradechat_core::control::overgenerate::{select_candidate, ScoredCandidate};
use gradechat_core::control::Method;
use gradechat_core::lexicon::{
    derive_heuristic_bins, CorpusLevelStats, HeuristicThresholds, LevelLexicon, LexiconEntry, Provenance,
};
use gradechat_core::lm::sampling::sample_base;
use gradechat_core::lm::{perplexity, ChatContext, GenerationConfig, NgramLm, Role, UniformLm};
use gradechat_core::metrics::{control_error, token_miss_rate_lemmas, trigram_diversity};
use gradechat_core::selfchat::REPORT_COLUMNS;
use gradechat_core::{synthetic, Level};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_gradechat");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------------------
// A1, A2: token miss rate

fn fixture_lexicon(words: &[(String, Level)]) -> LevelLexicon {
    let entries = words.iter().map(|(w, l)| LexiconEntry { lemma: w.clone(), level: *l, meaning: None });
    LevelLexicon::from_entries(entries, Provenance::GoldDeck, "fixture").expect("fixture lemmas are valid")
}

fn a1() -> Result<String> {
    let words: Vec<(String, Level)> = (0..50).map(|i| (format!("w{i}"), Level::ALL[i % 5])).collect();
    let lex = fixture_lexicon(&words);
    let table: HashMap<&str, u8> = words.iter().map(|(w, l)| (w.as_str(), l.value())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(0..30);
        let utt: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.15) {
                    format!("x{}", rng.gen_range(0..10))
                } else {
                    format!("w{}", rng.gen_range(0..50))
                }
            })
            .collect();
        let user = Level::ALL[rng.gen_range(0..5)];
        let (mut above, mut unbinned) = (0usize, 0usize);
        for t in &utt {
            match table.get(t.as_str()) {
                Some(&v) if v > user.value() => above += 1,
                Some(_) => {}
                None => unbinned += 1,
            }
        }
        let expected = if utt.is_empty() { 0.0 } else { above as f64 / utt.len() as f64 };
        let got = token_miss_rate_lemmas(&utt, &lex, user);
        ensure!(
            got.tmr == expected
                && got.cnt_above == above
                && got.cnt_unbinned == unbinned
                && got.total_tokens == utt.len(),
            "mismatch on {utt:?} at {user}: {got:?}"
        );
        checked += 1;
    }
    Ok(format!("{checked} utterances exact"))
}

fn a2() -> Result<String> {
    let lex = fixture_lexicon(&[
        ("a".into(), Level::N5),
        ("b".into(), Level::N4),
        ("d".into(), Level::N2),
        ("e".into(), Level::N1),
    ]);
    let r = token_miss_rate_lemmas(&["a", "a", "b"], &lex, Level::N4);
    ensure!(r.tmr == 0.0, "levels [1,1,2] at N4: {}", r.tmr);
    let r = token_miss_rate_lemmas(&["a", "d", "e", "a"], &lex, Level::N5);
    ensure!(r.tmr == 0.5, "levels [1,4,5,1] at N5: {}", r.tmr);
    let r = token_miss_rate_lemmas(&["zzz", "e"], &lex, Level::N5);
    ensure!(r.tmr == 0.5 && r.cnt_unbinned == 1, "levels [unbinned,5] at N5: {r:?}");
    Ok("0.0, 0.5, 0.5 (1 unbinned)".into())
}

// ---------------------------------------------------------------------------
// A3, A4, A5: control methods

fn ctx(seed: u64) -> ChatContext {
    let mut c = ChatContext::new("tutor", Role::Tutor, GenerationConfig::tutor_default().with_seed(seed));
    c.push(Role::Student, "私 は 猫").expect("student turn");
    c
}

struct Toy {
    lm: NgramLm,
    predictor: Predictor,
}

fn a3(toy: &Toy) -> Result<String> {
    let Toy { lm, predictor: p } = toy;
    let cfg = FudgeConfig::new(0.0, Level::N5);
    for seed in 0..100 {
        let c = ctx(seed);
        let fudge = generate_fudge_tokens(&c, lm, p, &cfg)?;
        let base = sample_base(lm, &c, cfg.top_k)?;
        ensure!(
            fudge.concat().as_bytes() == base.concat().as_bytes() && fudge.len() == base.len(),
            "λ=0 differs at seed {seed}"
        );
    }
    let mut dists = 0;
    for lambda in [0.0, 0.5, 0.8, 1.0] {
        let cfg = FudgeConfig::new(lambda, Level::N5);
        for seed in 0..20 {
            let mut bad: Option<String> = None;
            generate_fudge_observed(&ctx(seed), lm, p, &cfg, &mut |prefix, d| {
                dists += 1;
                let total: f64 = d.candidates.iter().map(|c| c.log_prob.exp()).sum();
                if (total - 1.0).abs() > 1e-9 {
                    bad.get_or_insert(format!("λ={lambda} distribution sums to {total}"));
                }
                if lambda == 1.0 {
                    let texts: Vec<&str> = d.candidates.iter().map(|c| c.text.as_str()).collect();
                    let scores = p.score_extensions(&p.state(prefix), &texts, Level::N5);
                    if scores.windows(2).any(|w| w[0] < w[1] - 1e-12) {
                        bad.get_or_insert(format!("λ=1 order differs from predictor order: {scores:?}"));
                    }
                }
            })?;
            if let Some(msg) = bad {
                bail!(msg);
            }
        }
    }
    Ok(format!("100 λ=0 seeds identical, {dists} distributions normalized"))
}

fn mean_tmr(toy: &Toy, lambda: f64, n: u64) -> Result<f64> {
    let lex = synthetic::lexicon();
    let cfg = FudgeConfig::new(lambda, Level::N5);
    let mut total = 0.0;
    for seed in 0..n {
        let toks = generate_fudge_tokens(&ctx(seed), &toy.lm, &toy.predictor, &cfg)?;
        total += token_miss_rate_lemmas(&toks, &lex, Level::N5).tmr;
    }
    Ok(total / n as f64)
}

fn a4(toy: &Toy) -> Result<String> {
    let lambdas = [0.0, 0.25, 0.5, 0.8, 0.9];
    let series = lambdas.iter().map(|&l| mean_tmr(toy, l, 100)).collect::<Result<Vec<_>>>()?;
    let shown: Vec<String> = series.iter().map(|v| format!("{v:.4}")).collect();
    ensure!(series[3] <= 0.7 * series[0], "λ=0.8 not 30% below λ=0: {shown:?}");
    for w in series.windows(2) {
        ensure!(w[1] <= w[0] + 0.005, "series increases: {shown:?}");
    }
    Ok(format!("TMR over λ {lambdas:?}: {}", shown.join(", ")))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn a5() -> Result<String> {
    let perms = permutations(5);
    ensure!(perms.len() == 120);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut trials = 0;
    for _ in 0..50 {
        let cands: Vec<ScoredCandidate> = (0..5)
            .map(|i| ScoredCandidate {
                index: i,
                text: format!("c{i}"),
                tokens: rng.gen_range(1..4),
                estimated_tmr: rng.gen_range(0..3) as f64 / 4.0,
            })
            .collect();
        let expected = cands
            .iter()
            .min_by(|a, b| {
                (a.estimated_tmr, a.tokens, a.index).partial_cmp(&(b.estimated_tmr, b.tokens, b.index)).unwrap()
            })
            .map(|c| c.index);
        for perm in &perms {
            let shuffled: Vec<ScoredCandidate> = perm.iter().map(|&i| cands[i].clone()).collect();
            let got = select_candidate(&shuffled).map(|p| shuffled[p].index);
            ensure!(got == expected, "picked {got:?}, expected {expected:?}");
            trials += 1;
        }
    }
    Ok(format!("{trials} orderings, 0 failures"))
}

// ---------------------------------------------------------------------------
// A6: self-chat suite through the CLI

fn run_cli(args: &[&str]) -> Result<std::process::Output> {
    let out = Command::new(BIN).args(args).env("RUST_LOG", "warn").output().context("running gradechat")?;
    ensure!(out.status.success(), "gradechat {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(out)
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path)?);
    }
    Ok(out)
}

fn a6() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    for dir in [&one, &two] {
        run_cli(&["selfchat-eval", "--seed", "11", "--out", dir.to_str().unwrap()])?;
    }
    let (a, b) = (dir_bytes(&one)?, dir_bytes(&two)?);
    ensure!(a == b, "rerun differs in {:?}", a.keys().filter(|k| a.get(*k) != b.get(*k)).collect::<Vec<_>>());

    let mut per_method: BTreeMap<String, usize> = BTreeMap::new();
    for line in String::from_utf8(a["transcripts.jsonl"].clone())?.lines() {
        let v: Value = serde_json::from_str(line)?;
        *per_method.entry(v["spec"]["method"].as_str().unwrap_or("?").to_string()).or_default() += 1;
    }
    ensure!(per_method.len() == 4, "methods present: {per_method:?}");
    ensure!(per_method.values().all(|&n| n == 75), "dialogues per method: {per_method:?}");

    let csv = String::from_utf8(a["report.csv"].clone())?;
    let header: Vec<&str> = csv.lines().next().unwrap_or("").split(',').collect();
    ensure!(header == REPORT_COLUMNS, "report columns {header:?}");
    let report: Value = serde_json::from_slice(&a["report.json"])?;
    ensure!(report.get("rows").is_some_and(|r| r.as_array().is_some_and(|r| r.len() == 4)), "report.json rows");
    Ok(format!("75 dialogues x 4 methods, {} columns, rerun byte-identical over {} files", header.len(), a.len()))
}

// ---------------------------------------------------------------------------
// A7: classifier

fn vote_oracle(tokens: &[String]) -> Level {
    let mut votes = [0usize; 5];
    for t in tokens {
        for level in Level::ALL {
            if synthetic::words(level).contains(&t.as_str()) {
                votes[level.index()] += 1;
            }
        }
    }
    let best = (0..5).fold(0, |b, i| if votes[i] > votes[b] { i } else { b });
    Level::ALL[best]
}

fn a7() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let lens: Vec<usize> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(1..12)).collect();
        let n: usize = lens.iter().map(|&l| expand_prefixes(&vec!["t"; l], Level::N3).len()).sum();
        ensure!(n == lens.iter().sum::<usize>(), "prefix count {n} for {lens:?}");
    }
    for seed in 0..50 {
        let counts: Vec<usize> = (0..5).map(|_| rng.gen_range(1..15)).collect();
        let corpus: Vec<LabeledSentence> = Level::ALL
            .into_iter()
            .zip(&counts)
            .flat_map(|(level, &n)| (0..n).map(move |i| LabeledSentence { tokens: vec![format!("{i}")], level }))
            .collect();
        let out = balance_by_downsampling(&corpus, seed)?;
        let min = *counts.iter().min().unwrap();
        for level in Level::ALL {
            let k = out.iter().filter(|s| s.level == level).count();
            ensure!(k == min, "{level}: {k} after balancing, minimum {min}");
        }
    }

    let vocab: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        let mut model =
            Predictor::init(vocab.clone(), TrainConfig { embedding_dim: 3, seed: trial, ..Default::default() });
        for p in model.params_mut() {
            *p = rng.gen_range(-0.5..0.5);
        }
        let examples: Vec<PrefixExample> = (0..6)
            .map(|_| PrefixExample {
                prefix: (0..rng.gen_range(1..5))
                    .map(|_| ["a", "b", "c", "d", "oov"][rng.gen_range(0..5)].to_string())
                    .collect(),
                label: Level::ALL[rng.gen_range(0..5)],
            })
            .collect();
        let (_, grad) = model.loss_and_gradient(&examples);
        let base = model.params().to_vec();
        let h = 1e-5;
        for i in 0..base.len() {
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus[i] += h;
            minus[i] -= h;
            let numeric = (model.loss_with(&plus, &examples) - model.loss_with(&minus, &examples)) / (2.0 * h);
            if grad[i].abs() < 1e-10 && numeric.abs() < 1e-10 {
                continue;
            }
            let rel = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            ensure!(rel < 1e-4, "parameter {i}: analytic {} numeric {numeric}", grad[i]);
        }
    }

    let (model, _) = synthetic::register_predictor(1);
    let held_out = synthetic::level_corpus(40, 99);
    let correct = held_out
        .iter()
        .filter(|s| model.predict_prefix(&s.tokens).map(|d| d.argmax()).ok() == Some(vote_oracle(&s.tokens)))
        .count();
    let accuracy = correct as f64 / held_out.len() as f64;
    ensure!(accuracy > 0.9, "held-out accuracy {accuracy}");
    Ok(format!("gradient max rel err {worst:.1e}, held-out accuracy {accuracy:.3}"))
}

// ---------------------------------------------------------------------------
// A8: lexicon

fn a8() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let out = tmp.path().join("vocab");
    run_cli(&["build-vocab", "--decks", fixtures().join("decks").to_str().unwrap(), "--out", out.to_str().unwrap()])?;
    for level in Level::ALL {
        let name = format!("{}.json", level.file_stem());
        let got = std::fs::read(out.join(&name))?;
        let want = std::fs::read(fixtures().join("golden").join(&name))?;
        ensure!(got == want, "{name} differs from golden:\n{}", String::from_utf8_lossy(&got));
    }
    let n5 = std::fs::read_to_string(out.join("n5.json"))?;
    ensure!(n5.contains("\"話す\"") && n5.contains("\"話すこと\""), "parenthetical expansion");
    ensure!(!n5.contains("〜") && n5.contains("\"について\""), "tilde stripping");
    ensure!(!n5.contains("\"の\""), "single-hiragana reading kept");

    // Four words; counts per level N5..N1.
    let tokens: [(&str, [u64; 5]); 4] =
        [("犬", [3, 0, 0, 0, 0]), ("走る", [1, 2, 0, 0, 0]), ("経済", [0, 0, 1, 1, 0]), ("稀", [0, 0, 0, 0, 1])];
    let thresholds = HeuristicThresholds { global_floor: 0.15, level_floor: 0.2, assign_threshold: 0.3 };
    let mut stats = CorpusLevelStats::default();
    for (w, counts) in &tokens {
        for (level, &n) in Level::ALL.iter().zip(counts) {
            for _ in 0..n {
                stats.add(w, *level);
            }
        }
    }
    // Exhaustive scan straight from the count table.
    let level_totals: Vec<u64> = (0..5).map(|i| tokens.iter().map(|(_, c)| c[i]).sum()).collect();
    let grand: u64 = level_totals.iter().sum();
    let mut oracle: BTreeMap<String, Level> = BTreeMap::new();
    for (w, counts) in &tokens {
        let global = counts.iter().sum::<u64>() as f64 / grand as f64;
        let within: Vec<f64> = (0..5).map(|i| counts[i] as f64 / level_totals[i] as f64).collect();
        if global <= thresholds.global_floor || !within.iter().any(|&f| f > thresholds.level_floor) {
            continue;
        }
        if let Some(i) = (0..5).find(|&i| within[i] > thresholds.assign_threshold) {
            oracle.insert(w.to_string(), Level::ALL[i]);
        }
    }
    let hand: BTreeMap<String, Level> = [("犬", Level::N5), ("走る", Level::N4), ("経済", Level::N3)]
        .iter()
        .map(|(w, l)| (w.to_string(), *l))
        .collect();
    ensure!(oracle == hand, "oracle {oracle:?} disagrees with hand computation");
    let bins = derive_heuristic_bins(&stats, thresholds);
    let got: BTreeMap<String, Level> = bins.entries().map(|e| (e.lemma.clone(), e.level)).collect();
    ensure!(got == hand, "heuristic bins {got:?}");
    Ok("5 golden files byte-exact, heuristic bins match scan".into())
}

// ---------------------------------------------------------------------------
// A9: fluency metrics

fn a9() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for size in [1usize, 4, 7, 50] {
        let vocab: Vec<String> = (0..size).map(|i| format!("v{i}")).collect();
        let lm = UniformLm::new(vocab.clone())?;
        let seq: Vec<&str> = (0..rng.gen_range(1..20)).map(|_| vocab[rng.gen_range(0..size)].as_str()).collect();
        let ppl = perplexity(&lm, &seq)?.value();
        ensure!((ppl - size as f64).abs() <= 1e-6, "|V|={size}: perplexity {ppl}");
    }

    let mut sequences = 0;
    for len in 0..=8u32 {
        for code in 0..3usize.pow(len) {
            let seq: Vec<String> = (0..len).map(|i| ((code / 3usize.pow(i)) % 3).to_string()).collect();
            let expected = if len < 3 {
                1.0
            } else {
                let mut seen = [false; 27];
                for w in seq.windows(3) {
                    let idx = w.iter().fold(0, |acc, s| acc * 3 + s.parse::<usize>().unwrap());
                    seen[idx] = true;
                }
                seen.iter().filter(|&&b| b).count() as f64 / (len as usize - 2) as f64
            };
            let got = trigram_diversity(&seq);
            ensure!(got == expected, "div@3 of {seq:?}: {got} vs {expected}");
            sequences += 1;
        }
    }

    for (score, target, want) in [(3.0, Level::N3, 0.0), (5.0, Level::N5, 16.0), (2.5, Level::N4, 0.25)] {
        let got = control_error(score, target);
        ensure!(got == want, "ControlError({score}, {}) = {got}", target.value());
    }
    Ok(format!("uniform PPL = |V|, div@3 over {sequences} sequences, ControlError 0/16/0.25"))
}

// ---------------------------------------------------------------------------
// A10, A11: study service

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(data: &Path) -> Result<Server> {
        let mut child = Command::new(BIN)
            .args(["serve", "--bind", "127.0.0.1:0", "--seed", "5", "--data-dir", data.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .context("spawning gradechat serve")?;
        let mut lines = BufReader::new(child.stderr.take().expect("piped stderr")).lines();
        let mut base = None;
        for line in lines.by_ref() {
            let line = line?;
            if let Some(addr) = line.strip_prefix("listening on ") {
                base = Some(addr.trim().to_string());
                break;
            }
        }
        std::thread::spawn(move || for _ in lines {});
        let base = base.ok_or_else(|| anyhow!("server exited before listening"))?;
        Ok(Server { child, base })
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}

struct Api {
    http: reqwest::blocking::Client,
    base: String,
}

impl Api {
    fn new(server: &Server) -> Api {
        Api { http: reqwest::blocking::Client::new(), base: server.base.clone() }
    }

    fn call(&self, method: &str, path: &str, body: Option<Value>) -> Result<(u16, String)> {
        let url = format!("{}{}", self.base, path);
        let req = match method {
            "GET" => self.http.get(url),
            _ => self.http.post(url),
        };
        let req = match body {
            Some(b) => req.json(&b),
            None => req,
        };
        let resp = req.timeout(Duration::from_secs(60)).send()?;
        Ok((resp.status().as_u16(), resp.text()?))
    }

    fn ok(&self, method: &str, path: &str, body: Option<Value>) -> Result<Value> {
        let (status, text) = self.call(method, path, body)?;
        ensure!((200..300).contains(&status), "{method} {path}: {status} {text}");
        Ok(serde_json::from_str(&text)?)
    }
}

fn create(api: &Api, participant: &str, method: &str) -> Result<(String, Vec<String>, String)> {
    let body = json!({ "participant_id": participant, "level": "N5", "method": method, "consent": true });
    let (status, text) = api.call("POST", "/sessions", Some(body))?;
    ensure!(status == 201, "create session: {status} {text}");
    let v: Value = serde_json::from_str(&text)?;
    let id = v["session_id"].as_str().context("session_id")?.to_string();
    let topics = v["offered_topics"]
        .as_array()
        .context("offered_topics")?
        .iter()
        .filter_map(|t| t.as_str().map(String::from))
        .collect();
    Ok((id, topics, text))
}

/// Two highlight spans inside the tutor text, or one for a short reply.
fn spans_for(tutor: &str) -> Value {
    let n = tutor.chars().count();
    if n >= 4 {
        json!([{ "start": 0, "end": 1 }, { "start": 2, "end": n }])
    } else {
        json!([{ "start": 0, "end": n }])
    }
}

fn a10() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let data = tmp.path().join("data");
    let mut server = Server::start(&data)?;
    let api = Api::new(&server);

    let (id, topics, _) = create(&api, "p1", "fudge")?;
    let mut sent = Vec::new();
    for (i, text) in ["私 は 猫 が 好き です", "今日 は 雨 です"].iter().enumerate() {
        let mut body = json!({ "text": text });
        if i == 0 {
            body["topic"] = json!(topics[0]);
        }
        let r = api.ok("POST", &format!("/sessions/{id}/turns"), Some(body))?;
        sent.push((text.to_string(), r["tutor"].as_str().context("tutor")?.to_string()));
    }
    let spans = spans_for(&sent[0].1);
    let r = api.ok(
        "POST",
        &format!("/sessions/{id}/annotations"),
        Some(json!({ "turn_index": 1, "spans": spans, "understood_overall": false })),
    )?;
    ensure!(r["spans"] == spans, "annotation response spans {}", r["spans"]);

    server.kill();
    let server = Server::start(&data)?;
    let api = Api::new(&server);
    let view = api.ok("GET", &format!("/sessions/{id}"), None)?;
    let turns = view["turns"].as_array().context("turns")?;
    ensure!(turns.len() == sent.len(), "{} turns after restart, {} sent", turns.len(), sent.len());
    for (t, (student, tutor)) in turns.iter().zip(&sent) {
        ensure!(t["student"] == json!(student) && t["tutor"] == json!(tutor), "turn differs after restart: {t}");
    }
    let want = serde_json::to_string(&spans)?;
    ensure!(
        serde_json::to_string(&turns[0]["annotation"]["spans"])? == want,
        "spans after restart {}",
        turns[0]["annotation"]["spans"]
    );
    let export = api.ok("GET", "/export", None)?;
    let exported = export["sessions"]
        .as_array()
        .and_then(|s| s.iter().find(|s| s["session_id"] == json!(id)))
        .context("session in export")?;
    ensure!(serde_json::to_string(&exported["turns"][0]["annotation"]["spans"])? == want, "exported spans differ");

    // Blind sessions: every client-visible body is scanned for method names.
    let mut bodies = Vec::new();
    let mut true_methods = HashSet::new();
    for _ in 0..4 {
        let (bid, btopics, created) = create(&api, "p2", "blind")?;
        bodies.push(created);
        let (status, text) =
            api.call("POST", &format!("/sessions/{bid}/turns"), Some(json!({ "text": "こんにちは" })))?;
        ensure!(status == 422, "first turn without topic: {status}");
        bodies.push(text);
        let (status, text) = api.call(
            "POST",
            &format!("/sessions/{bid}/turns"),
            Some(json!({ "text": "こんにちは", "topic": btopics[0] })),
        )?;
        ensure!(status == 200, "blind turn: {status} {text}");
        let tutor = serde_json::from_str::<Value>(&text)?["tutor"].as_str().unwrap_or_default().to_string();
        bodies.push(text);
        let (_, text) = api.call(
            "POST",
            &format!("/sessions/{bid}/annotations"),
            Some(json!({ "turn_index": 1, "spans": spans_for(&tutor), "understood_overall": true })),
        )?;
        bodies.push(text);
        let (_, text) = api.call("GET", &format!("/sessions/{bid}"), None)?;
        bodies.push(text);
        let export = api.ok("GET", "/export", None)?;
        if let Some(s) = export["sessions"].as_array().and_then(|s| s.iter().find(|s| s["session_id"] == json!(bid))) {
            true_methods.insert(s["method"].as_str().unwrap_or_default().to_string());
        }
    }
    for body in &bodies {
        let lower = body.to_lowercase();
        for m in Method::ALL {
            ensure!(!lower.contains(m.name()), "blind response names {}: {body}", m.name());
        }
    }
    ensure!(true_methods.len() == 4, "blind rotation used {true_methods:?}");
    Ok(format!("{} turns recovered after kill, spans byte-exact, {} blind bodies clean", sent.len(), bodies.len()))
}

fn a11() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let server = Server::start(&tmp.path().join("data"))?;
    let api = Api::new(&server);
    let (id, topics, _) = create(&api, "p1", "overgenerate")?;
    let mut submitted = Vec::new();
    for i in 1..=6 {
        let mut body = json!({ "text": format!("私 は 猫 が 好き です {i}") });
        if i == 1 {
            body["topic"] = json!(topics[0]);
        }
        let r = api.ok("POST", &format!("/sessions/{id}/turns"), Some(body))?;
        let spans = spans_for(r["tutor"].as_str().unwrap_or_default());
        api.ok(
            "POST",
            &format!("/sessions/{id}/annotations"),
            Some(json!({ "turn_index": i, "spans": spans, "understood_overall": i % 2 == 0 })),
        )?;
        submitted.push(spans);
    }
    let survey = json!({ "understand": 7, "effort": 3, "comfort": 8, "natural": 6, "again": 9 });
    api.ok("POST", &format!("/sessions/{id}/survey"), Some(survey.clone()))?;
    let export = api.ok("GET", "/export", None)?;
    let s = export["sessions"].as_array().and_then(|s| s.first()).context("exported session")?;
    let turns = s["turns"].as_array().context("turns")?;
    ensure!(turns.len() == 6, "{} exported turns", turns.len());
    for (t, spans) in turns.iter().zip(&submitted) {
        ensure!(&t["annotation"]["spans"] == spans, "turn {}: spans {}", t["turn_index"], t["annotation"]["spans"]);
    }
    let answers = s["survey"].as_object().context("survey")?;
    ensure!(answers.values().all(|v| v.as_u64().is_some_and(|v| (1..=10).contains(&v))), "survey {answers:?}");
    ensure!(s["survey"] == survey, "survey {}", s["survey"]);
    Ok("6 turns, 6 annotations, survey exported".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> Result<String>| {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let outcome = match (result, budget) {
            (Ok(msg), Some(b)) if elapsed > b => Err(anyhow!("{msg}; took {elapsed:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        match outcome {
            Ok(msg) => println!("{id} PASS {name} ({elapsed:.2?}): {msg}"),
            Err(e) => {
                failed += 1;
                println!("{id} FAIL {name} ({elapsed:.2?}): {e:#}");
            }
        }
    };
    report("A1", "TMR oracle equivalence", Some(Duration::from_secs(5)), &mut a1);
    report("A2", "TMR worked examples", None, &mut a2);
    let start = Instant::now();
    let toy = Toy { lm: synthetic::toy_lm(0), predictor: synthetic::toy_predictor(0).0 };
    println!("   toy LM and predictor ready in {:.2?}", start.elapsed());
    report("A3", "FUDGE reductions", Some(Duration::from_secs(10)), &mut || a3(&toy));
    report("A4", "control efficacy", Some(Duration::from_secs(120)), &mut || a4(&toy));
    report("A5", "overgenerate optimality", None, &mut a5);
    report("A6", "self-chat suite shape", None, &mut a6);
    report("A7", "classifier contracts", None, &mut a7);
    report("A8", "lexicon fidelity", None, &mut a8);
    report("A9", "fluency metrics", None, &mut a9);
    report("A10", "service durability", None, &mut a10);
    report("A11", "end-to-end study flow", None, &mut a11);
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
