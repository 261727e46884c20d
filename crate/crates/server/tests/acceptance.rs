//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};

use axum::http::{Method, StatusCode};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::json;
use vfmchat_core::engine::{FORMAT_FAILURE_ANSWER, DEFAULT_MAX_STEPS};
use vfmchat_core::executor::PLACEHOLDER_PNG;
use vfmchat_core::naming::{parse_name, ChainedName, FileId, OrgToken, ParsedName, Slug, UploadName};
use vfmchat_core::prompt::{
    truncate_history, DialogueHistory, TokenBudget, DEFAULT_MAX_HISTORY_TOKENS, FORCE_THINKING_MARKER,
    HISTORY_HEADER, QUERY_LABEL,
};
use vfmchat_core::provenance::NodeKind;
use vfmchat_core::{builtin_catalog, Termination, WorkspacePath};
use vfmchat_server::config::BackendKind;
use vfmchat_server::http::router;
use vfmchat_server::replay::{replay, ReplayOutcome};
use vfmchat_server::session::{MessageResponse, TRANSCRIPT_FILE};
use vfmchat_server::{scripted_factory, BackendFactory, SessionConfig, SessionStore, Shared, Upload};

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn flower() -> Upload {
    Upload {
        name: "flower.png".into(),
        bytes: PLACEHOLDER_PNG.to_vec(),
    }
}

fn trace_export(r: &MessageResponse) -> String {
    r.trace
        .iter()
        .map(|t| serde_json::to_string(t).unwrap() + "\n")
        .collect()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vfmchat"));
    c.env("RUST_LOG", "warn");
    c
}

fn golden_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/golden")
}

fn catalog_fidelity() -> Outcome {
    ensure!(builtin_catalog().len() == 22, "catalog has {} tools", builtin_catalog().len());
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = bin()
        .args(["render-prompts", "--out"])
        .arg(tmp.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "render-prompts failed: {}", String::from_utf8_lossy(&out.stderr));

    let golden_tools = golden_dir().join("tools");
    let mut names: Vec<String> = fs::read_dir(&golden_tools)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "catalog.txt")
        .collect();
    names.sort();
    ensure!(names.len() == 22, "{} golden tool files", names.len());
    let rendered: BTreeSet<String> = fs::read_dir(tmp.path().join("tools"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    ensure!(
        rendered.len() == 23,
        "render-prompts wrote {} tool files, expected 22 blocks and the catalog",
        rendered.len()
    );
    let (mut two, mut three) = (0, 0);
    for name in names.iter().chain(std::iter::once(&"catalog.txt".to_string())) {
        let want = fs::read(golden_tools.join(name)).map_err(|e| e.to_string())?;
        let got = fs::read(tmp.path().join("tools").join(name)).map_err(|_| format!("{name} not rendered"))?;
        ensure!(got == want, "{name} differs from its golden file");
        if name != "catalog.txt" {
            let text = String::from_utf8_lossy(&got);
            two += text.contains("comma seperated string of two") as usize;
            three += text.contains("comma seperated string of three") as usize;
        }
    }
    ensure!(two > 0 && three > 0, "phrasings missing: two={two} three={three}");

    let out = bin().args(["tools", "list"]).output().map_err(|e| e.to_string())?;
    let lines = String::from_utf8_lossy(&out.stdout).lines().count();
    ensure!(lines == 22, "tools list printed {lines} lines");
    Ok(())
}

fn cartoon_once(root: &Path, factory: BackendFactory) -> Result<(MessageResponse, Arc<SessionStore>, String), String> {
    let store = store_with(root, SessionConfig::default(), factory);
    let id = store.create_with(SessionConfig::default()).map_err(|e| e.to_string())?.id;
    let r = store
        .post_message(&id, CARTOON_QUERY, Some(&flower()))
        .map_err(|e| e.to_string())?;
    Ok((r, store, id))
}

fn cartoon_pipeline() -> Outcome {
    let paths = cartoon_paths(0, "flower");
    let steps = cartoon_steps(&paths);
    let mut exports = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (r, store, id) = cartoon_once(tmp.path(), scripted_factory(&steps))?;
        ensure!(r.termination == Termination::Normal, "termination {:?}", r.termination);
        ensure!(r.trace.len() == 3, "{} tool invocations", r.trace.len());
        let slugs: Vec<String> = r.files[1..]
            .iter()
            .map(|f| match parse_name(&f.path) {
                Ok(ParsedName::Chained(c)) => c.operation.as_str().to_string(),
                other => format!("{other:?}"),
            })
            .collect();
        ensure!(slugs == ["depth-of", "depth2image", "pix2pix"], "slugs {slugs:?}");
        let last = &r.files.last().unwrap().path;
        ensure!(r.final_answer.contains(last.as_str()), "final answer lacks {last}");

        let g = store.provenance(&id).map_err(|e| e.to_string())?;
        ensure!(g.nodes.len() == 4 && g.edges.len() == 3, "{} nodes {} edges", g.nodes.len(), g.edges.len());
        ensure!(g.diagnostics.is_empty(), "diagnostics {:?}", g.diagnostics);
        let roots: Vec<_> = g.nodes.iter().filter(|n| g.parent_edge(&n.id).is_none()).collect();
        ensure!(roots.len() == 1 && roots[0].kind == NodeKind::Upload, "roots {roots:?}");
        let mut at = roots[0].id.clone();
        let mut walked = vec![at.clone()];
        while let Some(e) = g.edges.iter().find(|e| e.from == at) {
            ensure!(g.edges.iter().filter(|x| x.from == at).count() == 1, "branch at {at}");
            at = e.to.clone();
            walked.push(at.clone());
        }
        ensure!(walked.len() == 4, "path covers {} nodes", walked.len());
        exports.push(trace_export(&r));
    }
    ensure!(exports[0] == exports[1], "trace exports differ between runs");
    Ok(())
}

fn filename_protocol() -> Outcome {
    let id = || "[a-z0-9]{1,12}";
    let slug = || "[a-z0-9][a-z0-9-]{0,12}";
    let chained = (id(), slug(), id(), slug(), prop_oneof![Just("png"), Just("jpg"), Just("jpeg")]);
    let mut runner = TestRunner::new(Config {
        cases: 1_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&chained, |(n, s, p, o, ext)| {
            let c = ChainedName {
                name: FileId::new(n).unwrap(),
                operation: Slug::new(s).unwrap(),
                prev: FileId::new(p).unwrap(),
                org: OrgToken::new(o).unwrap(),
            };
            let path = WorkspacePath::new("image", c.stem(), ext).to_string();
            prop_assert_eq!(parse_name(&path).unwrap(), ParsedName::Chained(c));
            Ok(())
        })
        .map_err(|e| format!("chained round trip: {e}"))?;
    runner
        .run(&id(), |i| {
            let want = ParsedName::Upload(UploadName { id: FileId::new(i.clone()).unwrap() });
            prop_assert_eq!(parse_name(&format!("image/{i}.png")).unwrap(), want);
            Ok(())
        })
        .map_err(|e| format!("upload round trip: {e}"))?;

    let piece = prop_oneof![
        Just("image/".to_string()),
        Just("_".to_string()),
        Just(".png".to_string()),
        Just("..".to_string()),
        Just("/".to_string()),
        "[a-z0-9-]{1,6}",
        "\\PC{0,4}",
    ];
    let fuzz = prop_oneof![
        any::<String>(),
        prop::collection::vec(piece, 0..10).prop_map(|v| v.concat()),
    ];
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let crashes = Mutex::new(0usize);
    runner
        .run(&fuzz, |s| {
            if catch_unwind(|| parse_name(&s)).is_err() {
                *crashes.lock().unwrap() += 1;
            }
            Ok(())
        })
        .map_err(|e| format!("fuzz: {e}"))?;
    let crashes = *crashes.lock().unwrap();
    ensure!(crashes == 0, "{crashes} parser crashes");

    match parse_name("image/ui3c_edge-of_o0ec_nji9dcgf.png") {
        Ok(ParsedName::Chained(c)) => {
            let got = [c.name.as_str(), c.operation.as_str(), c.prev.as_str(), c.org.as_str()];
            ensure!(got == ["ui3c", "edge-of", "o0ec", "nji9dcgf"], "fields {got:?}");
        }
        other => return Err(format!("worked example parsed as {other:?}")),
    }
    Ok(())
}

/// Where the marker sits relative to the query and the trace.
fn check_prompt(p: &str, query: &str) -> Outcome {
    let q = p.rfind(QUERY_LABEL).ok_or("no query label")?;
    let query_end = q + QUERY_LABEL.len() + query.len();
    ensure!(p[q + QUERY_LABEL.len()..].starts_with(query), "query text not after the label");
    let marker = p[query_end..].find(FORCE_THINKING_MARKER).ok_or("no marker after the query")? + query_end;
    let trace = &p[marker..];
    let before = &p[query_end..marker];
    ensure!(!before.contains("Observation:"), "trace content before the marker");
    ensure!(
        trace.lines().last().unwrap_or("").starts_with("Thought:"),
        "prompt does not end on an open thought"
    );
    Ok(())
}

fn force_thinking() -> Outcome {
    let paths = cartoon_paths(0, "flower");
    let edge = format!(" Yes\nAction: Edge Detection On Image\nAction Input: {}", paths[0]);
    let runs: Vec<(Vec<String>, &str, Option<Upload>)> = vec![
        (cartoon_steps(&paths), CARTOON_QUERY, Some(flower())),
        (vec![" No\nAI: Hello.".into()], "hello there", None),
        (
            vec![" Yes\nAction: Teleport Image\nAction Input: x".into(), " No\nAI: Sorry.".into()],
            "teleport it",
            None,
        ),
        (vec!["nonsense".into(); 3], "confuse yourself", None),
        (vec![edge; 10], "keep detecting edges", Some(flower())),
    ];
    let mut total = 0;
    for (responses, query, upload) in runs {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (factory, prompts) = capturing_factory(responses);
        let store = store_with(tmp.path(), SessionConfig::default(), factory);
        let id = store.create_with(SessionConfig::default()).map_err(|e| e.to_string())?.id;
        store
            .post_message(&id, query, upload.as_ref())
            .map_err(|e| e.to_string())?;
        let prompts = prompts.lock().unwrap();
        ensure!(!prompts.is_empty(), "no prompts captured for {query:?}");
        for (j, p) in prompts.iter().enumerate() {
            check_prompt(p, query).map_err(|e| format!("{query:?} prompt {j}: {e}"))?;
        }
        total += prompts.len();
    }
    ensure!(total >= 20, "only {total} prompts checked");
    Ok(())
}

/// Chars/4 estimate of each `Human:` block in a prompt's history section.
fn history_costs(prompt: &str) -> Result<Vec<usize>, String> {
    let start = prompt.find(HISTORY_HEADER).ok_or("no history header")? + HISTORY_HEADER.len() + 1;
    let end = prompt.rfind(QUERY_LABEL).ok_or("no query label")? - 1;
    let section = &prompt[start..end];
    Ok(section
        .split_inclusive('\n')
        .fold(Vec::<String>::new(), |mut acc, line| {
            if line.starts_with("Human: ") || acc.is_empty() {
                acc.push(line.to_string());
            } else {
                acc.last_mut().unwrap().push_str(line);
            }
            acc
        })
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| b.chars().count().div_ceil(4))
        .collect())
}

fn history_budget() -> Outcome {
    ensure!(DEFAULT_MAX_HISTORY_TOKENS == 2000, "constant is {DEFAULT_MAX_HISTORY_TOKENS}");
    ensure!(TokenBudget::default().max_history_tokens == 2000, "budget default");
    ensure!(SessionConfig::default().max_history_tokens == 2000, "session default");

    // 60 pairs of about 51 tokens each: far over budget.
    let mut h = DialogueHistory::default();
    for i in 0..60 {
        h.push(format!("question {i:02} {}", "q".repeat(80)), format!("answer {i:02} {}", "a".repeat(100)));
    }
    let cost = |q: &str, a: &str| format!("Human: {q}\nAI: {a}\n").chars().count().div_ceil(4);
    let all: usize = h.pairs().iter().map(|p| cost(&p.question, &p.answer)).sum();
    ensure!(all > 2000, "constructed history is only {all} tokens");
    let t = truncate_history(&h, &TokenBudget::default());
    let kept = t.history.pairs();
    let used: usize = kept.iter().map(|p| cost(&p.question, &p.answer)).sum();
    ensure!(used <= 2000, "kept {used} tokens");
    ensure!(kept == &h.pairs()[60 - kept.len()..], "kept pairs are not the newest suffix");
    let next_oldest = &h.pairs()[60 - kept.len() - 1];
    ensure!(
        used + cost(&next_oldest.question, &next_oldest.answer) > 2000,
        "dropped more pairs than needed"
    );

    // Through sessions: default budget, then an override from a config file.
    for (conf, budget) in [("", 2000usize), ("history.max_tokens = 300\n", 300)] {
        let cfg = SessionConfig::parse_text(conf).map_err(|e| e.to_string())?;
        ensure!(cfg.max_history_tokens == budget, "config gives {}", cfg.max_history_tokens);
        let answer = format!(" No\nAI: {}", "long answer ".repeat(25).trim());
        let (factory, prompts) = capturing_factory(vec![answer; 40]);
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = store_with(tmp.path(), cfg.clone(), factory);
        let id = store.create_with(cfg).map_err(|e| e.to_string())?.id;
        for i in 0..40 {
            store
                .post_message(&id, &format!("message number {i} {}", "x".repeat(60)), None)
                .map_err(|e| e.to_string())?;
        }
        let prompts = prompts.lock().unwrap();
        let last = prompts.last().unwrap();
        let costs = history_costs(last)?;
        let used: usize = costs.iter().sum();
        ensure!(used <= budget, "prompt history uses {used} of {budget}");
        ensure!(costs.len() < 39, "nothing was dropped at budget {budget}");
        let first_kept = 39 - costs.len();
        ensure!(
            last.contains(&format!("Human: message number {first_kept} ")),
            "oldest kept pair is not {first_kept}"
        );
        if first_kept > 0 {
            ensure!(
                !last.contains(&format!("Human: message number {} ", first_kept - 1)),
                "an older pair survived"
            );
        }
    }
    Ok(())
}

fn strictness() -> Outcome {
    let run = |responses: Vec<String>, query: &str, upload: Option<Upload>| {
        let tmp = tempfile::tempdir().unwrap();
        let (factory, prompts) = capturing_factory(responses);
        let store = store_with(tmp.path(), SessionConfig::default(), factory);
        let id = store.create_with(SessionConfig::default()).unwrap().id;
        let r = store.post_message(&id, query, upload.as_ref());
        let n = prompts.lock().unwrap().clone();
        (r, n)
    };

    // (a) unknown tool
    let (r, _) = run(
        vec![
            " Yes\nAction: Teleport Image\nAction Input: image/abc.png".into(),
            " No\nAI: I cannot teleport images.".into(),
        ],
        "teleport this",
        None,
    );
    let r = r.map_err(|e| format!("unknown tool round failed: {e}"))?;
    ensure!(r.trace.len() == 1, "trace {:?}", r.trace);
    ensure!(r.trace[0].observation.contains("unknown-tool"), "observation {:?}", r.trace[0].observation);
    ensure!(r.termination == Termination::Normal, "termination {:?}", r.termination);

    // (b) malformed steps: more bad replies are available than may be used.
    let (r, prompts) = run(vec!["I will just ramble.".into(); 10], "do something", None);
    let r = r.map_err(|e| format!("malformed round failed: {e}"))?;
    let retries = SessionConfig::default().format_retries;
    ensure!(retries == 2, "format_retries default {retries}");
    ensure!(prompts.len() == 1 + retries, "{} completions requested", prompts.len());
    for p in &prompts[1..] {
        ensure!(p.contains("no-terminal-marker"), "corrective prompt lacks the reason");
    }
    ensure!(r.termination == Termination::FormatFailure, "termination {:?}", r.termination);
    ensure!(r.final_answer == FORMAT_FAILURE_ANSWER, "answer {:?}", r.final_answer);
    ensure!(!r.final_answer.contains("image/") && r.files.is_empty(), "answer claims files");

    // (c) always-tool
    let up = cartoon_paths(0, "flower")[0].clone();
    let call = format!(" Yes\nAction: Edge Detection On Image\nAction Input: {up}");
    let (r, prompts) = run(vec![call; 25], "edges forever", Some(flower()));
    let r = r.map_err(|e| format!("always-tool round failed: {e}"))?;
    ensure!(DEFAULT_MAX_STEPS == 10, "max_steps default {DEFAULT_MAX_STEPS}");
    ensure!(r.termination == Termination::StepLimit, "termination {:?}", r.termination);
    ensure!(r.trace.len() == 10, "{} steps", r.trace.len());
    ensure!(prompts.len() == 10, "{} completions", prompts.len());
    Ok(())
}

fn parity_script() -> (Vec<String>, Vec<(String, bool)>) {
    let paths = cartoon_paths(3, "flower");
    let mut steps = cartoon_steps(&paths);
    steps.push(" No\nAI: It is a red flower drawn as a cartoon.".into());
    steps.push(format!(" Yes\nAction: Edge Detection On Image\nAction Input: {}", paths[3]));
    steps.push(" No\nAI: Edges are done.".into());
    let msgs = vec![
        (CARTOON_QUERY.to_string(), true),
        ("what is in the last picture?".to_string(), false),
        ("now detect its edges".to_string(), false),
    ];
    (steps, msgs)
}

fn http_parity() -> Outcome {
    let (steps, msgs) = parity_script();
    let cfg = SessionConfig {
        seed: 3,
        ..SessionConfig::default()
    };

    let lib_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = store_with(lib_dir.path(), cfg.clone(), scripted_factory(&steps));
    let id = store.create(&Default::default()).map_err(|e| e.to_string())?.id;
    let mut lib = Vec::new();
    for (text, with_image) in &msgs {
        let upload = with_image.then(flower);
        let r = store.post_message(&id, text, upload.as_ref()).map_err(|e| e.to_string())?;
        lib.push(r);
    }

    let http_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = router(store_with(http_dir.path(), cfg, scripted_factory(&steps)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (over_http, files_ok, traversal) = rt.block_on(async {
        let (status, body) = call(&app, Method::POST, "/v1/sessions", None).await;
        assert_eq!(status, StatusCode::CREATED);
        let sid = json(&body)["id"].as_str().unwrap().to_string();
        let mut out = Vec::new();
        for (text, with_image) in &msgs {
            let mut body = json!({ "text": text });
            if *with_image {
                body["image"] = json!({ "name": "flower.png", "data": b64(&PLACEHOLDER_PNG) });
            }
            let (status, bytes) = call(&app, Method::POST, &format!("/v1/sessions/{sid}/messages"), Some(body)).await;
            assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
            out.push(serde_json::from_slice::<MessageResponse>(&bytes).unwrap());
        }
        let first_file = out[0].files.last().unwrap().url.clone();
        let files_ok = call(&app, Method::GET, &first_file, None).await.0 == StatusCode::OK;
        let mut traversal = BTreeMap::new();
        for uri in [
            "/v1/files/../secret".to_string(),
            "/v1/files/%2e%2e/%2e%2e/etc/passwd".to_string(),
            format!("/v1/files/{sid}/../../secret"),
            format!("/v1/files/{sid}/image/..%2f..%2fsession.conf"),
            format!("/v1/files/{sid}/image%5c..%5c..%5csecret"),
            format!("/v1/files/{sid}/state.json"),
        ] {
            traversal.insert(uri.clone(), call(&app, Method::GET, &uri, None).await.0);
        }
        (out, files_ok, traversal)
    });

    ensure!(lib.len() == over_http.len(), "round counts differ");
    for (k, (a, b)) in lib.iter().zip(&over_http).enumerate() {
        ensure!(trace_export(a) == trace_export(b), "round {k}: trace exports differ");
        ensure!(a.final_answer == b.final_answer, "round {k}: answers differ");
        ensure!(a.termination == b.termination, "round {k}: terminations differ");
        let pa: Vec<_> = a.files.iter().map(|f| (&f.path, f.kind)).collect();
        let pb: Vec<_> = b.files.iter().map(|f| (&f.path, f.kind)).collect();
        ensure!(pa == pb, "round {k}: files differ");
    }
    ensure!(lib[0].trace.len() == 3 && lib[2].trace.len() == 1, "unexpected trace lengths");
    ensure!(files_ok, "a legitimate file request was refused");
    for (uri, status) in traversal {
        ensure!(status == StatusCode::BAD_REQUEST, "{uri} answered {status}");
    }
    Ok(())
}

fn record(root: &Path) -> Result<String, String> {
    let (steps, msgs) = parity_script();
    let cfg = SessionConfig {
        seed: 3,
        backend_kind: BackendKind::Recording,
        ..SessionConfig::default()
    };
    let store = store_with(root, cfg.clone(), scripted_factory(&steps));
    let id = store.create_with(cfg).map_err(|e| e.to_string())?.id;
    for (text, with_image) in &msgs {
        let upload = with_image.then(flower);
        store.post_message(&id, text, upload.as_ref()).map_err(|e| e.to_string())?;
    }
    fs::read_to_string(root.join(&id).join(TRANSCRIPT_FILE)).map_err(|e| e.to_string())
}

fn record_replay() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = record(a.path())?;
    ensure!(record(b.path())? == text, "two recordings of the same conversation differ");
    ensure!(text.matches("\"kind\":\"completion\"").count() == 7, "expected 7 completions");

    let shared = Arc::new(Shared::default());
    let replay_in = |t: &str| {
        let dir = tempfile::tempdir().unwrap();
        replay(shared.clone(), t, dir.path())
    };
    match replay_in(&text) {
        Ok(ReplayOutcome::Match(r)) => {
            ensure!(r.rounds == 3 && r.completions == 7, "replayed {r:?}");
        }
        other => return Err(format!("clean transcript: {other:?}")),
    }

    // Flip every byte in turn; each edit must be caught.
    let bytes = text.as_bytes();
    let mut missed = Vec::new();
    for i in 0..bytes.len() {
        let mut t = bytes.to_vec();
        t[i] = if t[i] == b'x' { b'y' } else { b'x' };
        let detected = match String::from_utf8(t) {
            Err(_) => true,
            Ok(s) => !matches!(replay_in(&s), Ok(ReplayOutcome::Match(_))),
        };
        if !detected {
            missed.push(i);
        }
    }
    ensure!(missed.is_empty(), "{} of {} byte edits went unnoticed, first at {}", missed.len(), bytes.len(), missed[0]);
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("catalog fidelity", catalog_fidelity),
        ("depth-to-cartoon pipeline", cartoon_pipeline),
        ("filename protocol", filename_protocol),
        ("force-thinking marker", force_thinking),
        ("history budget", history_budget),
        ("strictness ablations", strictness),
        ("http/library parity", http_parity),
        ("record/replay", record_replay),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
