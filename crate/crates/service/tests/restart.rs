use std::sync::Arc;

use multibo_service::api::*;
use multibo_service::Host;

fn create_req(seed: u64) -> CreateSessionRequest {
    serde_json::from_value(serde_json::json!({
        "task": { "name": "warp-affine", "seed": seed },
        "config": { "k": 3, "budget": 3, "init_batches": 1, "ei_raw_samples": 64, "ei_restarts": 2, "seed": seed }
    }))
    .unwrap()
}

fn choose(host: &Host, id: &str, token: &str, w: usize) -> SubmitChoiceResponse {
    let req: SubmitChoiceRequest = serde_json::from_value(serde_json::json!({ "token": token, "winners": [w] })).unwrap();
    host.submit(id, req).unwrap()
}

fn token(resp: &SubmitChoiceResponse) -> String {
    match &resp.outcome {
        Outcome::Batch { batch } => batch.token.clone(),
        Outcome::Final { .. } => panic!("finished early"),
    }
}

#[test]
fn restart_restores_every_session_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, finished, status_before);
    {
        let host = Host::open(dir.path()).unwrap();
        a = host.create(create_req(1)).unwrap();
        b = host.create(create_req(2)).unwrap();
        let r = choose(&host, &a.session.id, &a.batch.token, 0);
        choose(&host, &a.session.id, &token(&r), 2);

        let f = host.create(create_req(3)).unwrap();
        let mut t = f.batch.token.clone();
        for _ in 0..3 {
            t = token(&choose(&host, &f.session.id, &t, 1));
        }
        choose(&host, &f.session.id, &t, 1);
        finished = f.session.id;
        status_before = [&a.session.id, &b.session.id, &finished].map(|id| host.status(id).unwrap());
    }

    let host = Arc::new(Host::open(dir.path()).unwrap());
    assert_eq!(host.len(), 3);
    let status_after = [&a.session.id, &b.session.id, &finished].map(|id| host.status(id).unwrap());
    assert_eq!(status_before, status_after);
    assert_eq!(status_after[0].round, 2);
    assert_eq!(status_after[2].session.state, SessionStatus::Finished);

    // restored sessions continue exactly like an uninterrupted twin
    let pending = host.batch(&a.session.id).unwrap().batch;
    let next = choose(&host, &a.session.id, &pending.token, 1);
    let twin_dir = tempfile::tempdir().unwrap();
    let twin = Host::open(twin_dir.path()).unwrap();
    let t = twin.create(create_req(1)).unwrap();
    let r = choose(&twin, &t.session.id, &t.batch.token, 0);
    let r = choose(&twin, &t.session.id, &token(&r), 2);
    let twin_next = choose(&twin, &t.session.id, &token(&r), 1);
    assert_eq!(token(&next), token(&twin_next));

    // previews referenced before the restart are still served
    let preview = status_after[0].trajectory[0].incumbent_preview.clone();
    assert!(host.previews().get(preview.rsplit('/').next().unwrap()).is_some());
}

#[test]
fn failed_submit_leaves_the_record_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let host = Host::open(dir.path()).unwrap();
    let a = host.create(create_req(4)).unwrap();
    let path = dir.path().join("sessions").join(format!("{}.json", a.session.id));
    let before = std::fs::read(&path).unwrap();
    let req: SubmitChoiceRequest = serde_json::from_value(serde_json::json!({ "token": a.batch.token, "winners": [] })).unwrap();
    assert!(matches!(host.submit(&a.session.id, req), Err(multibo_service::HostError::BadRequest(_))));
    assert_eq!(std::fs::read(&path).unwrap(), before);
    choose(&host, &a.session.id, &a.batch.token, 0);
    assert_ne!(std::fs::read(&path).unwrap(), before);
}
