"""Command-line interface for the device client.

`ARSECURE_HOME` relocates the state directory (tests point it at temp
dirs); `ARSECURE_PASSWORD` bypasses the prompt for scripted use.
"""

from __future__ import annotations

import argparse
import getpass
import os
import sys
import time
from datetime import datetime

from . import agent as agent_mod, client as client_mod
from .client import ClientError, ClientHome, ConversationEntry

DEFAULT_SERVER = "http://127.0.0.1:7070"


def _password(confirm: bool = False) -> str:
    env = os.environ.get("ARSECURE_PASSWORD")
    if env is not None:
        return env
    password = getpass.getpass("password: ")
    if confirm and getpass.getpass("repeat password: ") != password:
        raise ClientError("passwords do not match")
    return password


def _print_entry(entry: ConversationEntry) -> None:
    stamp = datetime.fromtimestamp(entry.timestamp).strftime("%Y-%m-%d %H:%M:%S")
    arrow = "->" if entry.direction == "sent" else "<-"
    body = entry.text if entry.flag is None else f"[{entry.flag}]"
    print(f"[{stamp}] {arrow} {entry.peer}: {body}")


def cmd_init(home: ClientHome, args) -> int:
    identity = client_mod.init(home, args.user, _password(confirm=True),
                               args.server)
    print(f"registered {identity.username} at {identity.server_url}")
    print(f"identity written to {home.identity_path}")
    return 0


def cmd_send(home: ClientHome, args) -> int:
    with client_mod.unlock(home, _password()) as session:
        entry = session.send(args.recipient, " ".join(args.text))
        print(f"sent to {args.recipient} "
              f"(id {entry.message_id}, seq {entry.sequence})")
    return 0


def cmd_inbox(home: ClientHome, args) -> int:
    with client_mod.unlock(home, _password()) as session:
        new = session.inbox()
        for entry in new:
            _print_entry(entry)
        if not new and not args.follow:
            print("no new messages")
        while args.follow:
            time.sleep(2)
            for entry in session.inbox():
                _print_entry(entry)
    return 0


def cmd_contacts(home: ClientHome, args) -> int:
    with client_mod.unlock(home, _password()) as session:
        if args.action == "add":
            entry = session.add_contact(args.username, repin=args.repin)
            print(f"pinned {args.username} (key id {entry['key_id']})")
            return 0
        contacts = session.contacts()
        if not contacts:
            print("no contacts pinned")
        for contact in contacts:
            pinned = datetime.fromtimestamp(contact["pinned_at"])
            print(f"{contact['username']}  key id {contact['key_id']}  "
                  f"pinned {pinned:%Y-%m-%d %H:%M:%S}")
    return 0


def cmd_agent(home: ClientHome, args) -> int:
    with client_mod.unlock(home, _password()) as session:
        try:
            agent = agent_mod.DeviceAgent(session, bind=args.bind)
        except ValueError as err:
            raise ClientError(str(err)) from None
        # flush so the secret is readable even with stdout redirected
        print(f"device agent listening on {agent.url}", flush=True)
        print(f"X-Device-Session: {agent.secret}", flush=True)
        agent.run_forever()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="arsecure", description="ARSecure device client")
    parser.add_argument("--home",
                        default=os.environ.get("ARSECURE_HOME",
                                               client_mod.DEFAULT_HOME),
                        help="state directory (default ~/.arsecure)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="create and register an identity")
    p_init.add_argument("--user", required=True)
    p_init.add_argument("--server", default=DEFAULT_SERVER)
    p_init.set_defaults(func=cmd_init)

    p_send = sub.add_parser("send", help="encrypt and send a message")
    p_send.add_argument("recipient")
    p_send.add_argument("text", nargs="+")
    p_send.set_defaults(func=cmd_send)

    p_inbox = sub.add_parser("inbox", help="pull, decrypt, and show new mail")
    p_inbox.add_argument("--follow", action="store_true",
                         help="keep polling every 2 seconds")
    p_inbox.set_defaults(func=cmd_inbox)

    p_contacts = sub.add_parser("contacts", help="list or pin contacts")
    p_contacts.add_argument("action", nargs="?", choices=["add"])
    p_contacts.add_argument("username", nargs="?")
    p_contacts.add_argument("--repin", action="store_true",
                            help="accept a changed directory key")
    p_contacts.set_defaults(func=cmd_contacts)

    p_agent = sub.add_parser("agent", help="serve the localhost device API")
    p_agent.add_argument("--bind", default=agent_mod.DEFAULT_AGENT_BIND)
    p_agent.set_defaults(func=cmd_agent)

    args = parser.parse_args(argv)
    if args.command == "contacts" and args.action == "add" and not args.username:
        parser.error("contacts add requires a username")
    home = ClientHome(args.home)
    try:
        return args.func(home, args)
    except KeyboardInterrupt:
        return 130
    except ClientError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
