#pragma once

// Flat configuration tree with dotted keys. INI files map `[a.b]` sections
// and `c.d = v` entries to the key `a.b.c.d`; nested property trees flatten
// the same way, so every frontend shares one schema.

#include "common.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

namespace meeg
{

class Config
{
public:
    Config() = default;
    Config(std::initializer_list<std::pair<const std::string, std::string>> entries) : m_values(entries) {}

    static Config from_ptree(const boost::property_tree::ptree& tree)
    {
        Config c;
        c.flatten(tree, "");
        return c;
    }

    static Config from_ini(const std::string& path)
    {
        boost::property_tree::ptree tree;
        try
        {
            boost::property_tree::read_ini(path, tree);
        }
        catch (const boost::property_tree::ini_parser_error& e)
        {
            if (e.line() == 0)
                throw ConfigError("cannot read config '" + path + "': " + e.message());
            throw ParseError(path, e.line(), e.message());
        }
        return from_ptree(tree);
    }

    /// `key=value`
    static std::pair<std::string, std::string> parse_assignment(const std::string& text)
    {
        auto eq = text.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override '" + text + "' is not of the form key=value");
        return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
    }

    void set(const std::string& key, const std::string& value) { m_values[key] = value; }
    bool has(const std::string& key) const { return m_values.count(key) != 0; }
    void erase(const std::string& key) { m_values.erase(key); }
    bool empty() const noexcept { return m_values.empty(); }
    const std::map<std::string, std::string>& entries() const noexcept { return m_values; }

    /// Copy with `overrides` applied on top.
    Config merged(const Config& overrides) const
    {
        Config c = *this;
        for (const auto& [k, v] : overrides.m_values)
            c.m_values[k] = v;
        return c;
    }

    const std::string& required(const std::string& key) const
    {
        auto it = m_values.find(key);
        if (it == m_values.end())
            throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    std::string get(const std::string& key, const std::string& fallback) const
    {
        auto it = m_values.find(key);
        return it == m_values.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const
    {
        return has(key) ? to_double(key, required(key)) : fallback;
    }

    long get_int(const std::string& key, long fallback) const
    {
        if (!has(key))
            return fallback;
        const std::string& s = required(key);
        long v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size())
            throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) const
    {
        if (!has(key))
            return fallback;
        std::string s = required(key);
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        if (s == "true" || s == "1" || s == "yes" || s == "on")
            return true;
        if (s == "false" || s == "0" || s == "no" || s == "off")
            return false;
        throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
    }

    /// Keys not in `known`; a known entry ending in '.' matches any key with
    /// that prefix.
    std::vector<std::string> unknown_keys(const std::set<std::string>& known) const
    {
        std::vector<std::string> out;
        for (const auto& [k, v] : m_values)
        {
            if (known.count(k))
                continue;
            bool prefixed = std::any_of(known.begin(), known.end(), [&](const std::string& p)
                                        { return !p.empty() && p.back() == '.' && k.rfind(p, 0) == 0; });
            if (!prefixed)
                out.push_back(k);
        }
        return out;
    }

private:
    static std::string trim(const std::string& s)
    {
        auto b = s.find_first_not_of(" \t\r\n");
        auto e = s.find_last_not_of(" \t\r\n");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }

    static double to_double(const std::string& key, const std::string& s)
    {
        try
        {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used == s.size())
                return v;
        }
        catch (const std::exception&)
        {
        }
        throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
    }

    void flatten(const boost::property_tree::ptree& node, const std::string& prefix)
    {
        for (const auto& [name, child] : node)
        {
            std::string key = prefix.empty() ? name : prefix + "." + name;
            if (child.empty())
                m_values[key] = trim(child.data());
            else
                flatten(child, key);
        }
    }

    std::map<std::string, std::string> m_values;
};

} // namespace meeg
