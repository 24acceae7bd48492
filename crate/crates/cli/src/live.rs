//! Blocking HTTP transports for the live weather and push providers.

use std::time::Duration;

use jitai_core::dispatch::HttpPost;
use jitai_core::weather::HttpGet;

pub struct Transport(reqwest::blocking::Client);

impl Transport {
    pub fn new() -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("TLS backend initializes");
        Self(client)
    }
}

impl HttpGet for Transport {
    fn get(&self, url: &str) -> Result<String, String> {
        self.0
            .get(url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| e.to_string())
    }
}

impl HttpPost for Transport {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<u16, String> {
        self.0
            .post(url)
            .bearer_auth(bearer)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned())
            .send()
            .map(|r| r.status().as_u16())
            .map_err(|e| e.to_string())
    }
}
