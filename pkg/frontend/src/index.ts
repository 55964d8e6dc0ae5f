export * from "./types.js";
export * from "./client.js";
export * from "./canvas.js";
export * from "./timeline.js";
export * from "./agentmap.js";
