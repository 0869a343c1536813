//! Rendering a layered prompt and sending it through the gateway to the
//! scripted provider.

use std::sync::Arc;

use psysim::gateway::{params, prompt_digest, render_prompt, LlmGateway, ProviderConfig, ScriptedProvider, TemplateSet};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let templates = TemplateSet::seed();
    let prompt = render_prompt(
        templates.get("diagnosis_advice")?,
        &params([
            ("findings", "depressed_mood, anhedonia, sleep_disturbance"),
            ("ranking", "MDD (eligible, coverage 0.67); ADJ (not eligible, coverage 0.33)"),
        ]),
    )?;
    println!("prompt digest {}\n{prompt}\n", prompt_digest(&prompt));

    let gateway = LlmGateway::new(Arc::new(ScriptedProvider::demo()), ProviderConfig::default())?;
    let reply = gateway.complete_prompt(prompt).await?;
    println!("[{}] {}", reply.provider_id, reply.text);

    let miss = gateway.complete_prompt("a prompt nobody scripted").await?;
    println!("unscripted: {}", miss.text);
    Ok(())
}
