#pragma once

// Umbrella header. The live HTTPS transport is separate
// (finrag/http_transport.hpp) since it pulls in httplib and OpenSSL.

#include "finrag/error.hpp"
#include "finrag/text.hpp"
#include "finrag/tokenizer.hpp"
#include "finrag/corpus.hpp"
#include "finrag/vector_index.hpp"
#include "finrag/node_tree.hpp"
#include "finrag/providers.hpp"
#include "finrag/prompts.hpp"
#include "finrag/evalkit.hpp"
#include "finrag/rerank.hpp"
#include "finrag/expansion.hpp"
#include "finrag/indexing.hpp"
#include "finrag/agent.hpp"
#include "finrag/bench.hpp"
#include "finrag/config.hpp"
#include "finrag/http_providers.hpp"
#include "finrag/mock_providers.hpp"
