// SPDX-License-Identifier: Apache-2.0

//! GitHub-compatible REST client.

use async_trait::async_trait;
use reqwest::header::{HeaderMap, ACCEPT, AUTHORIZATION, LINK, USER_AGENT};
use reqwest::{Method, RequestBuilder, Response, StatusCode, Url};
use serde_json::{json, Value};
use triage_core::tracker::{RepoId, RepoSummary, TrackerClient, TrackerError};

const PER_PAGE: usize = 100;

#[derive(Debug, Clone)]
pub struct GithubClient {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl GithubClient {
    pub fn new(base_url: &str, token: Option<String>) -> Result<Self, TrackerError> {
        Url::parse(base_url).map_err(|e| TrackerError::Transport(format!("bad base URL {base_url:?}: {e}")))?;
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| TrackerError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            base: base_url.trim_end_matches('/').to_string(),
            token,
        })
    }

    fn url(&self, path: &str, query: &[(&str, &str)]) -> Result<Url, TrackerError> {
        let mut url =
            Url::parse(&format!("{}{path}", self.base)).map_err(|e| TrackerError::Transport(e.to_string()))?;
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query);
        }
        Ok(url)
    }

    fn request(&self, method: Method, url: Url) -> RequestBuilder {
        let rb = self
            .http
            .request(method, url)
            .header(ACCEPT, "application/vnd.github+json")
            .header(USER_AGENT, "issue-triage")
            .header("X-GitHub-Api-Version", "2022-11-28");
        match &self.token {
            Some(t) => rb.header(AUTHORIZATION, format!("Bearer {t}")),
            None => rb,
        }
    }

    async fn send(&self, rb: RequestBuilder) -> Result<Response, TrackerError> {
        let resp = rb.send().await.map_err(|e| TrackerError::Transport(e.to_string()))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let headers = resp.headers().clone();
        let text = resp.text().await.unwrap_or_default();
        Err(status_error(status, &headers, &text))
    }

    async fn json(resp: Response) -> Result<Value, TrackerError> {
        resp.json().await.map_err(|e| TrackerError::Malformed(e.to_string()))
    }

    async fn post(&self, path: &str, body: Value) -> Result<(), TrackerError> {
        let url = self.url(path, &[])?;
        self.send(self.request(Method::POST, url).json(&body)).await?;
        Ok(())
    }
}

/// Maps a non-success response to a tracker error.
pub fn status_error(status: StatusCode, headers: &HeaderMap, body: &str) -> TrackerError {
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok());
    let exhausted = header("x-ratelimit-remaining") == Some("0");
    if status == StatusCode::TOO_MANY_REQUESTS || (status == StatusCode::FORBIDDEN && exhausted) {
        return TrackerError::RateLimited {
            reset: header("x-ratelimit-reset").and_then(|v| v.trim().parse().ok()),
        };
    }
    let message = serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.get("message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(200).collect());
    match status {
        StatusCode::NOT_FOUND => TrackerError::NotFound(message),
        StatusCode::UNPROCESSABLE_ENTITY => TrackerError::Unprocessable(message),
        s => TrackerError::Status {
            status: s.as_u16(),
            message,
        },
    }
}

/// Target of the `rel="next"` entry of a `Link` header.
pub fn next_link(link: &str) -> Option<String> {
    link.split(',').find_map(|part| {
        let mut pieces = part.split(';');
        let target = pieces.next()?.trim();
        let is_next = pieces.any(|p| {
            let p = p.trim();
            p == "rel=\"next\"" || p == "rel=next"
        });
        (is_next && target.starts_with('<') && target.ends_with('>')).then(|| target[1..target.len() - 1].to_string())
    })
}

fn link_of(resp: &Response) -> Option<String> {
    resp.headers()
        .get(LINK)
        .and_then(|v| v.to_str().ok())
        .and_then(next_link)
}

fn parse_next(url: &str) -> Result<Url, TrackerError> {
    Url::parse(url).map_err(|e| TrackerError::Malformed(format!("bad Link target {url:?}: {e}")))
}

#[async_trait]
impl TrackerClient for GithubClient {
    async fn search_repositories(&self, language: &str, count: usize) -> Result<Vec<RepoSummary>, TrackerError> {
        let q = format!("language:{language}");
        let per_page = count.clamp(1, PER_PAGE).to_string();
        let mut url = self.url(
            "/search/repositories",
            &[("q", &q), ("sort", "stars"), ("order", "desc"), ("per_page", &per_page)],
        )?;
        let mut out = Vec::new();
        loop {
            let resp = self.send(self.request(Method::GET, url)).await?;
            let next = link_of(&resp);
            let page = Self::json(resp).await?;
            let items = page
                .get("items")
                .and_then(Value::as_array)
                .ok_or_else(|| TrackerError::Malformed("search response without items".into()))?;
            for item in items {
                let full_name = item
                    .get("full_name")
                    .and_then(Value::as_str)
                    .and_then(|s| s.parse::<RepoId>().ok())
                    .ok_or_else(|| TrackerError::Malformed("search item without full_name".into()))?;
                out.push(RepoSummary {
                    full_name,
                    stars: item.get("stargazers_count").and_then(Value::as_u64).unwrap_or(0),
                    language: item.get("language").and_then(Value::as_str).map(str::to_string),
                });
            }
            match next {
                Some(n) if out.len() < count && !items.is_empty() => url = parse_next(&n)?,
                _ => break,
            }
        }
        out.truncate(count);
        Ok(out)
    }

    async fn list_issues(&self, repo: &RepoId) -> Result<Vec<Value>, TrackerError> {
        let path = format!("/repos/{}/{}/issues", repo.owner(), repo.name());
        let per_page = PER_PAGE.to_string();
        let mut url = self.url(&path, &[("state", "all"), ("per_page", &per_page)])?;
        let mut out = Vec::new();
        loop {
            let resp = self.send(self.request(Method::GET, url)).await?;
            let next = link_of(&resp);
            match Self::json(resp).await? {
                Value::Array(items) => out.extend(items),
                _ => return Err(TrackerError::Malformed("issues response is not an array".into())),
            }
            match next {
                Some(n) => url = parse_next(&n)?,
                None => break,
            }
        }
        Ok(out)
    }

    async fn add_labels(&self, repo: &RepoId, issue_number: u64, labels: &[String]) -> Result<(), TrackerError> {
        let path = format!("/repos/{}/{}/issues/{issue_number}/labels", repo.owner(), repo.name());
        self.post(&path, json!({ "labels": labels })).await
    }

    async fn add_assignees(&self, repo: &RepoId, issue_number: u64, logins: &[String]) -> Result<(), TrackerError> {
        let path = format!(
            "/repos/{}/{}/issues/{issue_number}/assignees",
            repo.owner(),
            repo.name()
        );
        self.post(&path, json!({ "assignees": logins })).await
    }
}
