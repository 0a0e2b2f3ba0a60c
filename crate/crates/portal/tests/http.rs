use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use hogface::modelstore::save_model_file;
use hogface::synthetic::SyntheticFaces;
use hogface::{encode_pgm, Model, PipelineConfig};
use hogface_portal::{bind, serve, Portal};
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;

fn faces() -> SyntheticFaces {
    SyntheticFaces { persons: 8, images_per_person: 3, ..SyntheticFaces::default() }
}

fn train_model(path: &Path, dims: usize) {
    let images = faces().images();
    let train: Vec<_> = images.iter().filter(|im| im.index_within_class <= 2).collect();
    let config = PipelineConfig { dims, ..PipelineConfig::default() };
    save_model_file(&Model::train_images(config, &train).unwrap(), path).unwrap();
}

fn photo(person: usize, index: usize) -> Vec<u8> {
    encode_pgm(&faces().render(person, index))
}

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(model: &Path, data: &Path) -> Server {
        let portal = Arc::new(Portal::open(model, data).unwrap());
        let (listener, addr) = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(async move {
            serve(listener, portal, None, async {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
        Server { base: format!("http://{addr}"), stop: Some(tx), task }
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap();
    }
}

fn enroll_form(photo: Vec<u8>, meta: Value) -> Form {
    Form::new()
        .part("photo", Part::bytes(photo).file_name("face.pgm"))
        .text("metadata", meta.to_string())
}

async fn enroll(base: &str, photo: Vec<u8>, name: &str, status: &str) -> (StatusCode, Value) {
    let resp = reqwest::Client::new()
        .post(format!("{base}/api/persons"))
        .multipart(enroll_form(photo, json!({ "name": name, "status": status, "contact": "desk 3" })))
        .send()
        .await
        .unwrap();
    (resp.status(), resp.json().await.unwrap())
}

async fn query(base: &str, photo: Vec<u8>, params: &str) -> (StatusCode, Value) {
    let resp = reqwest::Client::new()
        .post(format!("{base}/api/match{params}"))
        .multipart(Form::new().part("photo", Part::bytes(photo).file_name("q.pgm")))
        .send()
        .await
        .unwrap();
    (resp.status(), resp.json().await.unwrap())
}

async fn get(base: &str, path: &str) -> (StatusCode, Value) {
    let resp = reqwest::get(format!("{base}{path}")).await.unwrap();
    (resp.status(), resp.json().await.unwrap())
}

fn setup() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.2dhg");
    train_model(&model, 10);
    let data = dir.path().join("data");
    (dir, model, data)
}

#[tokio::test(flavor = "multi_thread")]
async fn fresh_service_is_empty() {
    let (_dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    let (status, health) = get(&server.base, "/api/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["gallery_size"], 0);
    let version = health["model_version"].as_str().unwrap();
    assert_eq!(version.len(), 16);
    assert!(version.bytes().all(|b| b.is_ascii_hexdigit()));

    let (status, resp) = query(&server.base, photo(0, 1), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["candidates"], json!([]));
    assert_eq!(resp["model_version"], version);

    let (status, err) = get(&server.base, "/api/persons/nobody").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    let (status, err) = get(&server.base, "/api/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(err["message"].is_string());
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn enrollment_validation() {
    let (_dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    let client = reqwest::Client::new();
    let url = format!("{}/api/persons", server.base);

    let no_photo = Form::new().text("metadata", json!({"name": "A", "status": "missing"}).to_string());
    let resp = client.post(&url).multipart(no_photo).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "bad_request");

    let resp = client.post(&url).body("{}").send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert!(resp.json::<Value>().await.unwrap()["message"].is_string());

    let (status, body) = enroll(&server.base, photo(0, 1), "  ", "missing").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "validation");
    let (status, _) = enroll(&server.base, b"GIF89a not really".to_vec(), "A", "missing").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = enroll(&server.base, photo(0, 1), "A", "lost").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(get(&server.base, "/api/health").await.1["gallery_size"], 0);
    assert_eq!(std::fs::metadata(data.join("records.log")).unwrap().len(), 0);
    assert_eq!(std::fs::read_dir(data.join("blobs")).unwrap().count(), 0);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn enroll_then_match() {
    let (_dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    let mut ids = Vec::new();
    for p in 0..4 {
        let status = if p % 2 == 0 { "missing" } else { "found" };
        let (code, body) = enroll(&server.base, photo(p, 1), &format!("Person {p}"), status).await;
        assert_eq!(code, StatusCode::CREATED, "{body}");
        ids.push(body["id"].as_str().unwrap().to_string());
    }
    assert_eq!(ids.iter().collect::<std::collections::BTreeSet<_>>().len(), 4);
    assert_eq!(get(&server.base, "/api/health").await.1["gallery_size"], 4);

    let (code, rec) = get(&server.base, &format!("/api/persons/{}", ids[1])).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(rec["name"], "Person 1");
    assert_eq!(rec["status"], "found");
    assert_eq!(rec["contact"], "desk 3");
    assert_eq!(rec["photo_refs"].as_array().unwrap().len(), 1);
    assert!(rec["enrolled_at"].as_u64().unwrap() > 1_600_000_000);

    // the same photo: itself first at distance zero
    let (code, resp) = query(&server.base, photo(2, 1), "?k=2").await;
    assert_eq!(code, StatusCode::OK);
    let c = resp["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c[0]["id"], ids[2].as_str());
    assert_eq!(c[0]["total_distance"], 0.0);
    assert_eq!(c[0]["votes"], 9);

    // a different capture of an enrolled person
    let (_, resp) = query(&server.base, photo(3, 3), "?k=10").await;
    let c = resp["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 4);
    assert_eq!(c[0]["id"], ids[3].as_str());
    let scores: Vec<f64> = c.iter().map(|x| x["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");

    let (_, resp) = query(&server.base, photo(3, 3), "?k=10&status=missing").await;
    let c = resp["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 2);
    assert!(c.iter().all(|x| x["status"] == "missing"));

    for bad in ["?k=0", "?k=two", "?status=lost"] {
        let (code, body) = query(&server.base, photo(0, 1), bad).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(body["code"], "bad_request");
    }
    let (code, _) = query(&server.base, b"junk".to_vec(), "").await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn png_uploads_are_accepted() {
    let (_dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    let img = faces().render(5, 1);
    let gray = image::GrayImage::from_fn(img.cols() as u32, img.rows() as u32, |x, y| {
        image::Luma([img.get(y as usize, x as usize) as u8])
    });
    let mut png = Vec::new();
    gray.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
    let (code, body) = enroll(&server.base, png, "P", "found").await;
    assert_eq!(code, StatusCode::CREATED);
    let (_, resp) = query(&server.base, photo(5, 1), "").await;
    assert_eq!(resp["candidates"][0]["id"], body["id"]);
    assert_eq!(resp["candidates"][0]["total_distance"], 0.0);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn storage_failure_is_503_and_leaves_nothing() {
    let (_dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    assert_eq!(enroll(&server.base, photo(0, 1), "A", "missing").await.0, StatusCode::CREATED);
    let blobs = data.join("blobs");
    std::fs::remove_dir_all(&blobs).unwrap();
    std::fs::write(&blobs, b"not a directory").unwrap();
    let (code, body) = enroll(&server.base, photo(1, 1), "B", "missing").await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["code"], "storage");
    assert_eq!(get(&server.base, "/api/health").await.1["gallery_size"], 1);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_queries_see_whole_persons() {
    let (_dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    let base = server.base.clone();
    let writers: Vec<_> = (0..6)
        .map(|p| {
            let base = base.clone();
            tokio::spawn(async move { enroll(&base, photo(p, 1), &format!("W{p}"), "missing").await })
        })
        .collect();
    let readers: Vec<_> = (0..12)
        .map(|i| {
            let base = base.clone();
            tokio::spawn(async move {
                let (code, resp) = query(&base, photo(i % 6, 2), "?k=10").await;
                assert_eq!(code, StatusCode::OK);
                for c in resp["candidates"].as_array().unwrap() {
                    let (code, rec) = get(&base, &format!("/api/persons/{}", c["id"].as_str().unwrap())).await;
                    assert_eq!(code, StatusCode::OK);
                    assert_eq!(rec["name"], c["name"]);
                }
            })
        })
        .collect();
    for w in writers {
        assert_eq!(w.await.unwrap().0, StatusCode::CREATED);
    }
    for r in readers {
        r.await.unwrap();
    }
    assert_eq!(get(&base, "/api/health").await.1["gallery_size"], 6);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn new_model_recomputes_features() {
    let (dir, model, data) = setup();
    let server = Server::start(&model, &data).await;
    let mut ids = Vec::new();
    for p in 0..3 {
        ids.push(enroll(&server.base, photo(p, 1), "X", "found").await.1["id"].clone());
    }
    let v1 = get(&server.base, "/api/health").await.1["model_version"].clone();
    server.stop().await;

    let other = dir.path().join("other.2dhg");
    train_model(&other, 6);
    let server = Server::start(&other, &data).await;
    let health = get(&server.base, "/api/health").await.1;
    assert_ne!(health["model_version"], v1);
    assert_eq!(health["gallery_size"], 3);
    for (p, id) in ids.iter().enumerate() {
        let (_, resp) = query(&server.base, photo(p, 1), "").await;
        assert_eq!(&resp["candidates"][0]["id"], id);
        assert_eq!(resp["candidates"][0]["total_distance"], 0.0);
    }
    server.stop().await;
}

struct Process {
    child: Child,
    base: String,
}

impl Process {
    fn spawn(model: &Path, data: &Path) -> Process {
        let mut child = Command::new(env!("CARGO_BIN_EXE_hogface-portal"))
            .args(["--listen", "127.0.0.1:0"])
            .env("HOGFACE_MODEL", model)
            .env("HOGFACE_PORTAL_DATA", data)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr: SocketAddr = line.trim().strip_prefix("listening on ").unwrap().parse().unwrap();
        Process { child, base: format!("http://{addr}") }
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn restarted_process_answers_identically() {
    let (_dir, model, data) = setup();
    let first = Process::spawn(&model, &data);
    let mut ids = Vec::new();
    for p in 0..5 {
        let (code, body) = enroll(&first.base, photo(p, 1), &format!("Person {p}"), "missing").await;
        assert_eq!(code, StatusCode::CREATED);
        ids.push(body["id"].clone());
    }
    let mut before = Vec::new();
    for (p, id) in ids.iter().enumerate() {
        let (_, resp) = query(&first.base, photo(p, 2), "?k=5").await;
        assert_eq!(&resp["candidates"][0]["id"], id);
        before.push(resp);
    }
    drop(first);

    let second = Process::spawn(&model, &data);
    assert_eq!(get(&second.base, "/api/health").await.1["gallery_size"], 5);
    for (p, expected) in before.iter().enumerate() {
        let (_, resp) = query(&second.base, photo(p, 2), "?k=5").await;
        assert_eq!(&resp, expected);
    }
    let (code, rec) = get(&second.base, &format!("/api/persons/{}", ids[0].as_str().unwrap())).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(rec["name"], "Person 0");
}

#[test]
fn missing_model_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hogface-portal"))
        .args(["--listen", "127.0.0.1:0", "--model"])
        .arg(dir.path().join("none.2dhg"))
        .arg("--data-dir")
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load model"));
}
