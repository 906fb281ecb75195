// Regenerates fixtures/contracts/*.sol and *.json from bodies/ using solcjs.
// usage: NODE_PATH=<dir with solc> node compile.js
const fs = require("fs");
const path = require("path");
const solc = require("solc");

const here = __dirname;
const out = path.join(here, "..", "contracts");
const base = fs.readFileSync(path.join(here, "base.sol.txt"), "utf8");

for (const file of fs.readdirSync(path.join(here, "bodies")).sort()) {
  const name = file.replace(/\.body$/, "");
  const source = base + "\n" + fs.readFileSync(path.join(here, "bodies", file), "utf8");
  const unit = name + ".sol";
  fs.writeFileSync(path.join(out, unit), source);
  const input = {
    language: "Solidity",
    sources: { [unit]: { content: source } },
    settings: {
      optimizer: { enabled: false },
      outputSelection: { "*": { "": ["ast"], "*": ["evm.deployedBytecode.object"] } },
    },
  };
  const result = JSON.parse(solc.compile(JSON.stringify(input)));
  const errors = (result.errors || []).filter((e) => e.severity === "error");
  if (errors.length) {
    console.error(name, errors.map((e) => e.formattedMessage).join("\n"));
    process.exit(1);
  }
  result.compiler = "solc " + solc.version();
  delete result.errors;
  fs.writeFileSync(path.join(out, name + ".json"), JSON.stringify(result, null, 1) + "\n");
  console.log("compiled", name);
}
