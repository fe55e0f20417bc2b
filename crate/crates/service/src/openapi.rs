use serde_json::{json, Value};

fn error_ref() -> Value {
    json!({ "$ref": "#/components/schemas/ApiError" })
}

/// OpenAPI-style descriptor served at `/spec`.
pub fn api_descriptor() -> Value {
    let id_param = json!({ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } });
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "ccsp episode service",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Interactive CO2 storage well-placement episodes. The hidden porosity field is never returned."
        },
        "paths": {
            "/episodes": {
                "post": {
                    "summary": "Create an episode with a fresh prior belief and hidden truth",
                    "requestBody": { "content": { "application/json": { "schema": { "$ref": "#/components/schemas/CreateEpisode" } } } },
                    "responses": {
                        "201": { "description": "{id, status, legal_actions, belief_summary}" },
                        "400": error_ref()
                    }
                },
                "get": {
                    "summary": "List episodes",
                    "parameters": [
                        { "name": "status", "in": "query", "schema": { "enum": ["awaiting_action", "terminal"] } },
                        { "name": "offset", "in": "query", "schema": { "type": "integer", "minimum": 0 } },
                        { "name": "limit", "in": "query", "schema": { "type": "integer", "minimum": 1, "maximum": 500 } }
                    ],
                    "responses": { "200": { "description": "{total, offset, limit, items}" }, "400": error_ref() }
                }
            },
            "/episodes/{id}": {
                "get": {
                    "summary": "Session snapshot: wells, ledger, history, belief summary, state hash",
                    "parameters": [id_param.clone()],
                    "responses": { "200": { "description": "SessionSnapshot" }, "404": error_ref() }
                }
            },
            "/episodes/{id}/actions": {
                "post": {
                    "summary": "Apply an action, update the belief and append to the episode log",
                    "parameters": [id_param.clone()],
                    "requestBody": { "content": { "application/json": { "schema": { "$ref": "#/components/schemas/CcsAction" } } } },
                    "responses": {
                        "200": { "description": "{observation, reward, discounted_return, belief_summary, legal_actions, status}" },
                        "400": error_ref(),
                        "404": error_ref(),
                        "409": error_ref(),
                        "422": error_ref()
                    }
                }
            },
            "/episodes/{id}/suggest": {
                "get": {
                    "summary": "Plan on the current belief without changing the session",
                    "parameters": [
                        id_param.clone(),
                        { "name": "queries", "in": "query", "schema": { "type": "integer", "minimum": 1, "default": 100 } },
                        { "name": "seed", "in": "query", "schema": { "type": "integer", "minimum": 0 } }
                    ],
                    "responses": { "200": { "description": "{action, root_stats, queries, nodes, elapsed_ms}" }, "404": error_ref(), "409": error_ref() }
                }
            },
            "/episodes/{id}/belief": {
                "get": {
                    "summary": "Belief mean and variance for one layer, rows indexed by j",
                    "parameters": [id_param.clone(), { "name": "layer", "in": "query", "schema": { "type": "integer", "minimum": 0 } }],
                    "responses": { "200": { "description": "{layer, nx, ny, mean, variance}" }, "400": error_ref(), "404": error_ref() }
                }
            },
            "/episodes/{id}/saturation": {
                "get": {
                    "summary": "Saturation data the observation mode grants: monitor-column readings or seismic images",
                    "parameters": [id_param, { "name": "year", "in": "query", "required": true, "schema": { "type": "integer", "minimum": 0 } }],
                    "responses": { "200": { "description": "SaturationView" }, "400": error_ref(), "404": error_ref() }
                }
            },
            "/spec": {
                "get": { "summary": "This descriptor", "responses": { "200": { "description": "OpenAPI-style JSON" } } }
            }
        },
        "components": {
            "schemas": {
                "CreateEpisode": {
                    "type": "object",
                    "required": ["mode"],
                    "properties": {
                        "mode": { "enum": ["none", "monitoring", "seismic"] },
                        "grid": { "type": "array", "items": { "type": "integer", "minimum": 1 }, "minItems": 3, "maxItems": 3 },
                        "seed": { "type": "integer", "minimum": 0 },
                        "fidelity": { "type": "integer", "minimum": 1 },
                        "ensemble_size": { "type": "integer", "minimum": 2, "maximum": 500 }
                    }
                },
                "CcsAction": {
                    "oneOf": [
                        { "type": "object", "properties": { "type": { "const": "place_monitor" }, "i": { "type": "integer" }, "j": { "type": "integer" } } },
                        { "type": "object", "properties": { "type": { "const": "place_injector" }, "i": { "type": "integer" }, "j": { "type": "integer" } } },
                        { "type": "object", "properties": { "type": { "const": "seismic_survey" } } },
                        { "type": "object", "properties": { "type": { "const": "no_op" } } }
                    ]
                },
                "ApiError": {
                    "type": "object",
                    "required": ["code", "message"],
                    "properties": {
                        "code": { "enum": ["bad_request", "illegal_action", "not_found", "conflict", "internal"] },
                        "message": { "type": "string" }
                    }
                }
            }
        }
    })
}
