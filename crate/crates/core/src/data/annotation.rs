//! Shape-caption annotation.
//!
//! A multimodal model is walked through the capture process in four staged
//! questions and asked to name the touched object in the last one. The
//! default [`Annotator`] just reads the sidecar captions shipped with the
//! dataset; [`HttpAnnotator`] posts the prompt and image to an external
//! endpoint configured through `ANNOTATOR_URL`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use base64::Engine as _;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::dataset::read_caption;
use super::ppm;
use crate::error::{Error, Result};
use crate::image::Image;

pub const ANNOTATOR_URL_ENV: &str = "ANNOTATOR_URL";

/// Stage cues, in order. Each appears verbatim in the built prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTemplate {
    pub stages: [String; 4],
}

impl Default for AnnotationTemplate {
    fn default() -> Self {
        Self {
            stages: [
                "Step 1: The tactile sensor is about to touch an object. Describe what is in front of the sensor in the visual image.".into(),
                "Step 2: The sensor is now in contact with the object. Which surface is pressed against the gel?".into(),
                "Step 3: Check for special situations: the sensor may be occluded, sliding, lifted off, or touching nothing at all.".into(),
                "Step 4: Give the final answer on one line in the form \"Step 4: the object is <object>\".".into(),
            ],
        }
    }
}

pub fn build_annotation_prompt(context: &str) -> String {
    build_annotation_prompt_with(&AnnotationTemplate::default(), context)
}

pub fn build_annotation_prompt_with(template: &AnnotationTemplate, context: &str) -> String {
    let mut prompt = String::from(
        "You are helping to label frames recorded with a vision-based tactile sensor. \
         Reason step by step through the capture process.\n",
    );
    if !context.trim().is_empty() {
        prompt.push_str(&format!("Context: {}\n", context.trim()));
    }
    for stage in &template.stages {
        prompt.push_str(stage);
        prompt.push('\n');
    }
    prompt
}

/// Result of parsing a model response. `flagged` marks responses whose
/// step-four answer could not be found and need manual review.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub shape_caption: String,
    pub flagged: bool,
}

fn step_four_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?im)step\s*(?:4|four)\s*[:.)-]\s*(?:the\s+)?object\s+is\s*:?\s*"?([^"\n]*?)"?\s*\.?\s*$"#)
            .expect("static regex")
    })
}

/// Extract the object phrase from the last step-four answer. Never fails.
pub fn parse_annotation_response(text: &str) -> Annotation {
    let answer = step_four_regex()
        .captures_iter(text)
        .last()
        .map(|c| c[1].trim().to_lowercase());
    match answer {
        Some(a) if !a.is_empty() => Annotation {
            shape_caption: a,
            flagged: false,
        },
        _ => {
            log::warn!("annotation response has no usable step-four answer; flagged for review");
            Annotation {
                shape_caption: String::new(),
                flagged: true,
            }
        }
    }
}

pub trait Annotator {
    fn annotate(&self, sample_id: &str, image: &Image) -> Result<Annotation>;
}

/// Reads the shape caption recorded next to each image.
#[derive(Debug, Clone)]
pub struct SidecarAnnotator {
    pub root: PathBuf,
}

impl Annotator for SidecarAnnotator {
    fn annotate(&self, sample_id: &str, _image: &Image) -> Result<Annotation> {
        let rec = read_caption(&self.root, sample_id)?;
        Ok(Annotation {
            flagged: rec.contact && rec.shape.is_empty(),
            shape_caption: rec.shape,
        })
    }
}

#[derive(Debug, Serialize)]
struct AnnotationRequest<'a> {
    prompt: &'a str,
    image: String,
}

#[derive(Debug, Deserialize)]
struct AnnotationReply {
    #[serde(alias = "response", alias = "answer")]
    text: String,
}

/// Posts `{"prompt", "image"}` (image = base64 P6 bytes) and parses the reply,
/// which may be JSON with a `text`/`response` field or plain text.
#[derive(Debug, Clone)]
pub struct HttpAnnotator {
    pub url: String,
    pub context: String,
}

impl Annotator for HttpAnnotator {
    fn annotate(&self, _sample_id: &str, image: &Image) -> Result<Annotation> {
        let prompt = build_annotation_prompt(&self.context);
        let body = AnnotationRequest {
            prompt: &prompt,
            image: base64::engine::general_purpose::STANDARD.encode(ppm::encode(image)?),
        };
        let reply = ureq::post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::Annotator(e.to_string()))?
            .into_string()
            .map_err(|e| Error::Annotator(e.to_string()))?;
        let text = serde_json::from_str::<AnnotationReply>(&reply)
            .map(|r| r.text)
            .unwrap_or(reply);
        Ok(parse_annotation_response(&text))
    }
}

/// `HttpAnnotator` when `ANNOTATOR_URL` is set, otherwise the sidecar reader.
pub fn annotator_from_env(root: &Path) -> Box<dyn Annotator> {
    match std::env::var(ANNOTATOR_URL_ENV) {
        Ok(url) if !url.trim().is_empty() => Box::new(HttpAnnotator {
            url,
            context: "tactile capture session".into(),
        }),
        _ => Box::new(SidecarAnnotator {
            root: root.to_path_buf(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_carries_every_stage_cue() {
        let p = build_annotation_prompt("capture session");
        for cue in ["about to touch", "in contact", "special situations", "Step 4"] {
            assert!(p.contains(cue), "missing {cue:?}");
        }
        for stage in AnnotationTemplate::default().stages {
            assert!(p.contains(&stage));
        }
        assert!(p.contains("capture session"));
    }

    #[test]
    fn parses_step_four_object() {
        let cases = [
            ("... Step 4: the object is a basketball surface", "a basketball surface"),
            ("Step 1: a desk.\nStep 4: The object is a knitted scarf.\n", "a knitted scarf"),
            ("step four - object is \"a round button\"", "a round button"),
            ("Step 4: the object is a zipper\nthanks", "a zipper"),
            ("Step 4: object is: a cross screw head.", "a cross screw head"),
        ];
        for (text, want) in cases {
            let a = parse_annotation_response(text);
            assert_eq!(a.shape_caption, want, "{text:?}");
            assert!(!a.flagged);
        }
    }

    #[test]
    fn unparseable_is_flagged() {
        for text in ["", "I cannot tell", "Step 4: the object is"] {
            let a = parse_annotation_response(text);
            assert_eq!(a.shape_caption, "");
            assert!(a.flagged, "{text:?}");
        }
    }

    #[test]
    fn http_annotator_round_trip() {
        use std::io::{BufRead, BufReader, Read, Write};
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            assert!(req["prompt"].as_str().unwrap().contains("about to touch"));
            assert!(!req["image"].as_str().unwrap().is_empty());
            let reply = r#"{"text":"Step 4: the object is a ribbed seam"}"#;
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
        });
        let annotator = HttpAnnotator {
            url: format!("http://{addr}/annotate"),
            context: "test".into(),
        };
        let img = Image::filled(2, 2, &[0.5, 0.5, 0.5]);
        let a = annotator.annotate("x", &img).unwrap();
        server.join().unwrap();
        assert_eq!(a.shape_caption, "a ribbed seam");
    }
}
