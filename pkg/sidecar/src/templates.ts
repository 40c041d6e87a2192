/**
 * Prompt templates live under prompts/ as plain-text files with {slot}
 * placeholders. Rendering with a complete slot map must leave no residual
 * braces.
 */

import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';

export const TEMPLATE_IDS = ['V1', 'V2', 'V3', 'V4', 'dailymed', 'rephrase'] as const;
export type TemplateId = (typeof TEMPLATE_IDS)[number];

const PROMPTS_DIR = join(dirname(fileURLToPath(import.meta.url)), '..', 'prompts');

const cache = new Map<string, string>();

export function loadTemplate(id: TemplateId): string {
  let text = cache.get(id);
  if (text === undefined) {
    text = readFileSync(join(PROMPTS_DIR, `${id}.txt`), 'utf8');
    cache.set(id, text);
  }
  return text;
}

export class TemplateError extends Error {}

export function renderTemplate(template: string, slots: Record<string, string>): string {
  const rendered = template.replace(/\{([a-z_]+)\}/g, (whole, name: string) => {
    if (name in slots) {
      return slots[name];
    }
    throw new TemplateError(`missing slot {${name}}`);
  });
  const residual = rendered.match(/\{[a-z_]+\}/);
  if (residual) {
    throw new TemplateError(`residual slot ${residual[0]} after rendering`);
  }
  return rendered;
}

export function renderDecisionPrompt(
  id: TemplateId,
  positiveToken: string,
  negativeToken: string,
  productInfo: string,
): string {
  return renderTemplate(loadTemplate(id), {
    positive_token: positiveToken,
    negative_token: negativeToken,
    product_info: productInfo,
  });
}

export function renderRephrasePrompt(options: {
  otherFields: Record<string, string>;
  targetColumn: string;
  targetText: string;
  instruction: string;
}): string {
  const context = Object.entries(options.otherFields)
    .map(([key, value]) => `${key}: ${value}`)
    .join('\n');
  return renderTemplate(loadTemplate('rephrase'), {
    other_fields: context,
    target_column: options.targetColumn,
    target_text: options.targetText,
    instruction: options.instruction,
  });
}
