import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const root = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures");

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(root, name), "utf-8")) as T;
}
